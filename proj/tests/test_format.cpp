// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "goquant/format.hpp"
#include "goquant/sampling.hpp"

using namespace goquant;

namespace {

Model random_model(sampling::Rng& rng, int tensors) {
  Model m;
  for (int t = 0; t < tensors; ++t) {
    QuantConfig cfg;
    cfg.bits = rng() % 2 ? 3 : 4;
    cfg.topology = rng() % 4 ? Topology::pot : Topology::linear;
    cfg.k = rng() % 3 ? 2 : 1;
    cfg.micro = std::size_t{1} << (1 + rng() % 5);
    cfg.macro = cfg.micro * (1 + rng() % 4);
    cfg.scale_bits = 4 + static_cast<int>(rng() % 9);
    cfg.norm_scope = rng() % 2 ? NormScope::per_channel : NormScope::per_macro_block;
    const std::size_t d_out = 1 + rng() % 6, d_in = 1 + rng() % 150;
    const auto w = sampling::gaussian_matrix(rng, d_out, d_in);
    if (rng() % 2) {
      cfg.mode = SolveMode::ref;
      const auto stats = collect_stats(sampling::gaussian_matrix(rng, 40, d_in), StatKind::max_abs);
      m.tensors.push_back(quantize_tensor(w, &stats, cfg, "t" + std::to_string(t)));
    } else {
      m.tensors.push_back(quantize_tensor(w, nullptr, cfg, "t" + std::to_string(t)));
    }
  }
  return m;
}

Errc load_error(std::span<const std::uint8_t> bytes) {
  try {
    load_model(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::usage;
}

}  // namespace

TEST(BitIo, RoundTrip) {
  io::BitWriter w;
  w.put(5, 3);
  w.put_signed(-3, 4);
  w.put(0xABC, 12);
  w.put_signed(127, 8);
  const auto bytes = w.bytes();
  EXPECT_EQ(bytes.size(), 4u);
  io::BitReader r(bytes);
  EXPECT_EQ(r.get(3), 5u);
  EXPECT_EQ(r.get_signed(4), -3);
  EXPECT_EQ(r.get(12), 0xABCu);
  EXPECT_EQ(r.get_signed(8), 127);
}

TEST(ModelFile, RoundTripBitIdentical) {
  sampling::Rng rng(113);
  for (int t = 0; t < 30; ++t) {
    const auto m = random_model(rng, 1 + t % 4);
    const auto bytes = save_model(m);
    EXPECT_EQ(bytes.size(), expected_model_size(m));
    const auto back = load_model(bytes);
    ASSERT_EQ(back, m);
    EXPECT_EQ(save_model(back), bytes);
  }
}

TEST(ModelFile, EmptyModel) {
  const auto bytes = save_model(Model{});
  EXPECT_EQ(bytes.size(), 10u);
  EXPECT_TRUE(load_model(bytes).tensors.empty());
}

TEST(ModelFile, Errors) {
  sampling::Rng rng(127);
  const auto bytes = save_model(random_model(rng, 2));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{7}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_EQ(load_error(std::span(bytes).first(cut)), Errc::eof) << cut;
  auto bad = bytes;
  bad[0] ^= 0x20;
  EXPECT_EQ(load_error(bad), Errc::bad_magic);
  bad = bytes;
  bad[4] = 9;
  EXPECT_EQ(load_error(bad), Errc::bad_version);
  bad = bytes;
  bad.push_back(0);
  EXPECT_EQ(load_error(bad), Errc::corrupt);
  try {
    load_model(std::span(bytes).first(5));
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "unexpected EOF");
  }
}

TEST(ModelFile, CorruptLatticeId) {
  QuantConfig cfg;
  Model m;
  m.tensors.push_back(quantize_tensor(Matrix(1, 4, 0.5), nullptr, cfg, "a"));
  auto bytes = save_model(m);
  bytes[10 + 4 + 1 + 8] = 7;  // header, name length, name, dims
  EXPECT_EQ(load_error(bytes), Errc::corrupt);
}

TEST(ModelFile, KnownBytes) {
  // One 1x4 PoT3 tensor named "w" with weights [1, -0.5, 0.25, 0].
  Matrix w(1, 4);
  w.data = {1, -0.5, 0.25, 0};
  QuantConfig cfg;
  cfg.macro = 4;
  cfg.micro = 4;
  Model m;
  m.tensors.push_back(quantize_tensor(w, nullptr, cfg, "w"));
  const auto bytes = save_model(m);
  const std::vector<std::uint8_t> head{'G', 'O', 'Q', 'T', 1, 0, 1, 0, 0, 0, 1, 0, 0, 0, 'w', 1, 0, 0, 0, 4, 0, 0, 0,
                                       0, 4, 0, 4, 0, 2, 0, 8, 8};
  ASSERT_GE(bytes.size(), head.size());
  EXPECT_TRUE(std::equal(head.begin(), head.end(), bytes.begin()));
  // codes 7,1,5,4 (3 bits each) | stride-1=0 (4 bits) | signs 2 bits | c1 8 bits | c2 8 bits = 34 bits -> 5 bytes
  EXPECT_EQ(bytes.size(), head.size() + 8 + 4 + 16 + 8 + 5);
  const auto payload = std::span(bytes).last(5);
  EXPECT_EQ(payload[0], 0x4F);  // 111 001 10|1 ...
  EXPECT_EQ(payload[1] & 0x0F, 0x09);
}

TEST(TensorFile, RoundTripAndErrors) {
  sampling::Rng rng(131);
  TensorContainer c;
  c.tensors.push_back(NamedTensor::from_matrix("a", sampling::gaussian_matrix(rng, 3, 5)));
  c.tensors.push_back(NamedTensor{"vec", {7}, std::vector<float>(7, 1.5f)});
  const auto bytes = save_tensor_container(c);
  EXPECT_EQ(load_tensor_container(bytes), c);
  EXPECT_EQ(c.at("vec").as_matrix().cols, 7u);
  EXPECT_THROW(c.at("missing"), Error);

  auto bad = bytes;
  bad[1] = 'X';
  try {
    load_tensor_container(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::bad_magic);
  }
  try {
    load_tensor_container(std::span(bytes).first(bytes.size() - 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::eof);
  }
  bad = bytes;
  bad[4] = 2;
  try {
    load_tensor_container(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::bad_version);
  }
}
