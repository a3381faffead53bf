// SPDX-License-Identifier: Apache-2.0
//
// goquant: quantize, evaluate, inspect, bench and verify dual-basis PoT models.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "goquant/goquant.hpp"
#include "goquant/sampling.hpp"
#include "goquant/verify.hpp"

namespace gq = goquant;

namespace {

using Clock = std::chrono::steady_clock;

// key=value report lines; porcelain mode prints them verbatim, otherwise aligned.
class Report {
 public:
  explicit Report(bool porcelain) : porcelain_(porcelain) {}

  void section(const std::string& title) {
    prefix_ = title.empty() ? "" : title + ".";
    if (!porcelain_) std::cout << (title.empty() ? "" : "[" + title + "]\n");
  }

  template <typename T>
  void put(const std::string& key, const T& value) {
    std::ostringstream os;
    os.precision(10);
    os << value;
    if (porcelain_) {
      std::cout << prefix_ << key << '=' << os.str() << '\n';
    } else {
      std::cout << "  " << key << std::string(key.size() < 24 ? 24 - key.size() : 1, ' ') << os.str() << '\n';
    }
  }

  bool porcelain() const { return porcelain_; }

 private:
  bool porcelain_;
  std::string prefix_;
};

unsigned thread_cap() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("GOQUANT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw gq::Error(gq::Errc::usage, "GOQUANT_THREADS must be a positive integer");
    n = std::min<unsigned>(n, static_cast<unsigned>(v));
  }
  return n;
}

// Reads `key = value` lines ('#' comments) and appends `--key value` for every key
// not already given on the command line, so flags win over the file.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw gq::Error(gq::Errc::usage, "cannot open config file " + path);
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw gq::Error(gq::Errc::usage, path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty() || given(key)) continue;
    if (value == "true") {
      args.push_back("--" + key);
    } else if (value != "false") {
      args.push_back("--" + key);
      args.push_back(value);
    }
  }
  return args;
}

std::vector<std::string> sorted_names(const gq::Model& m) {
  std::vector<std::string> names;
  for (const auto& t : m.tensors) names.push_back(t.name);
  std::sort(names.begin(), names.end());
  return names;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------------------
// quantize
// ---------------------------------------------------------------------------

struct QuantizeArgs {
  std::string weights, calib, out;
  std::string topology = "pot", mode = "geo", norm_scope = "channel";
  gq::QuantConfig cfg;
};

int run_quantize(const QuantizeArgs& a, Report& rep) {
  gq::QuantConfig cfg = a.cfg;
  cfg.topology = a.topology == "linear" ? gq::Topology::linear : gq::Topology::pot;
  cfg.mode = a.mode == "ref" ? gq::SolveMode::ref : gq::SolveMode::geo;
  cfg.norm_scope = a.norm_scope == "block" ? gq::NormScope::per_macro_block : gq::NormScope::per_channel;
  cfg.validate();
  if (cfg.mode == gq::SolveMode::ref && a.calib.empty())
    throw gq::Error(gq::Errc::usage, "quantize: --mode ref requires --calib");

  const auto weights = gq::load_tensor_file(a.weights);
  gq::TensorContainer calib;
  if (!a.calib.empty()) calib = gq::load_tensor_file(a.calib);

  std::vector<const gq::NamedTensor*> order;
  for (const auto& t : weights.tensors) order.push_back(&t);
  std::sort(order.begin(), order.end(), [](auto* x, auto* y) { return x->name < y->name; });

  const unsigned threads = thread_cap();
  gq::Model model;
  rep.section("");
  rep.put("tensors", order.size());
  rep.put("lattice", cfg.lattice().name());
  rep.put("mode", a.mode);
  rep.put("k", cfg.k);
  const auto t_all = Clock::now();
  for (const auto* t : order) {
    const gq::Matrix w = t->as_matrix();
    std::optional<gq::CalibStats> stats;
    if (!a.calib.empty()) {
      const gq::Matrix x = calib.at(t->name).as_matrix();
      if (x.cols != w.cols)
        throw gq::Error(gq::Errc::data, "calibration tensor '" + t->name + "' has " + std::to_string(x.cols) +
                                            " channels, weights expect " + std::to_string(w.cols));
      stats = gq::collect_stats(x, gq::StatKind::max_abs);
    }
    gq::QuantizeStats diag;
    const auto t0 = Clock::now();
    auto qt = gq::quantize_tensor(w, stats ? &*stats : nullptr, cfg, &diag, threads, t->name);
    const double secs = seconds_since(t0);
    const auto er = gq::error_report(w, qt);
    rep.section(t->name);
    rep.put("shape", std::to_string(qt.d_out) + "x" + std::to_string(qt.d_in));
    rep.put("frobenius_rel", er.frobenius_rel);
    rep.put("mean_cosine", er.mean_cosine);
    rep.put("rows_skipped", er.rows_skipped);
    rep.put("bits_per_weight", gq::bits_per_weight(qt.config, qt.d_in));
    rep.put("ref_geo_fallbacks", diag.ref_geo_fallbacks);
    rep.put("ridge_fallbacks", diag.ridge_fallbacks);
    rep.put("seconds", secs);
    model.tensors.push_back(std::move(qt));
  }
  gq::save_model_file(a.out, model);
  rep.section("");
  rep.put("out", a.out);
  rep.put("bytes", gq::expected_model_size(model));
  rep.put("seconds", seconds_since(t_all));
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string model, weights, inputs, calib;
  std::string act_scale = "dynamic";
  std::vector<std::string> metrics{"mse", "cosine", "outgap"};
};

int run_eval(const EvalArgs& a, Report& rep) {
  for (const auto& m : a.metrics)
    if (m != "mse" && m != "cosine" && m != "outgap") throw gq::Error(gq::Errc::usage, "eval: unknown metric " + m);
  const bool calib_scale = a.act_scale == "calib";
  if (calib_scale && a.calib.empty()) throw gq::Error(gq::Errc::usage, "eval: --act-scale calib requires --calib");
  const auto model = gq::load_model_file(a.model);
  const auto weights = gq::load_tensor_file(a.weights);
  const auto inputs = gq::load_tensor_file(a.inputs);
  gq::TensorContainer calib;
  if (calib_scale) calib = gq::load_tensor_file(a.calib);
  auto wants = [&](const char* m) { return std::find(a.metrics.begin(), a.metrics.end(), m) != a.metrics.end(); };

  for (const auto& name : sorted_names(model)) {
    const auto& qt = *model.find(name);
    const gq::Matrix w = weights.at(name).as_matrix();
    const gq::Matrix x = inputs.at(name).as_matrix();
    if (w.rows != qt.d_out || w.cols != qt.d_in || x.cols != qt.d_in)
      throw gq::Error(gq::Errc::data, "eval: tensor '" + name + "' shape disagrees with the model");
    std::optional<gq::CalibStats> stats;
    if (calib_scale) stats = gq::collect_stats(calib.at(name).as_matrix(), gq::StatKind::max_abs);
    const auto qa = gq::quantize_activations(x, qt, calib_scale ? gq::ActScaleSource::calib : gq::ActScaleSource::dynamic,
                                             stats ? &*stats : nullptr);
    gq::OpCounters counters;
    const gq::Matrix y_q = gq::shiftadd_gemm(qa, qt, counters);
    const gq::Matrix y = gq::reference_gemm(x, w);

    double se = 0, ref = 0, cos_sum = 0;
    std::size_t cos_rows = 0;
    for (std::size_t n = 0; n < y.rows; ++n) {
      double ab = 0, aa = 0, bb = 0;
      for (std::size_t o = 0; o < y.cols; ++o) {
        const double p = y(n, o), q = y_q(n, o);
        se += (p - q) * (p - q);
        ref += p * p;
        ab += p * q;
        aa += p * p;
        bb += q * q;
      }
      if (aa > 0 && bb > 0) {
        cos_sum += ab / std::sqrt(aa * bb);
        ++cos_rows;
      }
    }
    rep.section(name);
    rep.put("batch", x.rows);
    if (wants("mse")) rep.put("mse", y.data.empty() ? 0.0 : se / static_cast<double>(y.data.size()));
    if (wants("cosine")) rep.put("cosine", cos_rows ? cos_sum / static_cast<double>(cos_rows) : 0.0);
    if (wants("outgap")) rep.put("outgap", ref > 0 ? std::sqrt(se / ref) : std::sqrt(se));
    rep.put("weight_frobenius_rel", gq::error_report(w, qt).frobenius_rel);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

int run_bench(const std::string& model_path, const std::string& inputs_path, Report& rep) {
  const auto model = gq::load_model_file(model_path);
  const auto inputs = gq::load_tensor_file(inputs_path);
  for (const auto& name : sorted_names(model)) {
    const auto& qt = *model.find(name);
    const gq::Matrix x = inputs.at(name).as_matrix();
    if (x.cols != qt.d_in) throw gq::Error(gq::Errc::data, "bench: inputs for '" + name + "' have the wrong width");
    const auto qa = gq::quantize_activations(x, qt, gq::ActScaleSource::dynamic);
    gq::OpCounters c, c_ref;
    gq::KernelTrace t, t_ref;
    const auto t0 = Clock::now();
    gq::shiftadd_gemm(qa, qt, c, &t);
    const double secs = seconds_since(t0);
    gq::integer_reference_gemm(qa, qt, c_ref, &t_ref);
    const auto r = gq::report_counters(c, qt, x.rows);
    rep.section(name);
    rep.put("outputs", r.outputs);
    rep.put("shifts", c.shifts);
    rep.put("adds", c.adds);
    rep.put("int_muls", c.int_muls);
    rep.put("skipped_zeros", c.skipped_zeros);
    rep.put("float_muls", c.float_muls);
    rep.put("inner_muls", c.inner_muls);
    rep.put("int_muls_per_output", r.int_muls_per_output);
    rep.put("expected_int_muls_per_output", r.expected_int_muls);
    rep.put("mac_muls_per_output", r.mac_muls_per_output);
    rep.put("mul_reduction", r.mul_reduction);
    rep.put("skipped_fraction", r.skipped_fraction);
    rep.put("bit_exact", t == t_ref ? "yes" : "no");
    rep.put("seconds", secs);
    if (!(t == t_ref)) throw gq::Error(gq::Errc::numeric, "bench: shift-add result differs from integer reference");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

int run_inspect(const std::string& model_path, Report& rep) {
  const auto bytes = gq::io::read_file(model_path);
  const auto model = gq::load_model(bytes);
  rep.section("");
  rep.put("magic", "GOQT");
  rep.put("version", gq::kModelVersion);
  rep.put("tensors", model.tensors.size());
  rep.put("bytes", bytes.size());
  for (const auto& name : sorted_names(model)) {
    const auto& qt = *model.find(name);
    const auto& cfg = qt.config;
    rep.section(name);
    rep.put("shape", std::to_string(qt.d_out) + "x" + std::to_string(qt.d_in));
    rep.put("lattice", cfg.lattice().name());
    rep.put("mode", cfg.mode == gq::SolveMode::ref ? "ref" : "geo");
    rep.put("k", cfg.k);
    rep.put("macro", cfg.macro);
    rep.put("micro", cfg.micro);
    rep.put("macro_blocks_per_row", qt.macro_count());
    rep.put("micro_blocks_per_row", cfg.k == 2 ? qt.micro_count() : 0);
    rep.put("scale_bits", cfg.scale_bits);
    rep.put("act_bits", cfg.act_bits);
    rep.put("s_c1", qt.s_c1);
    if (cfg.k == 2) rep.put("s_c2", qt.s_c2);
    const double bpw = gq::bits_per_weight(cfg, qt.d_in);
    rep.put("bits_per_weight", bpw);
    rep.put("overhead_bits_per_weight", bpw - cfg.bits);
    if (cfg.k == 2) {
      std::map<int, std::size_t> hist;
      for (const auto& mb : qt.micro) ++hist[mb.stride];
      for (const auto& [s, n] : hist) rep.put("stride_" + std::to_string(s), n);
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

int run_verify(const gq::verify::Options& o, Report& rep) {
  const auto results = gq::verify::run_all(o);
  bool all = true;
  rep.section("");
  for (const auto& r : results) {
    all = all && r.pass;
    if (rep.porcelain()) {
      std::cout << r.name << '=' << (r.pass ? "pass" : "fail") << " cases=" << r.cases << " failures=" << r.failures
                << (r.detail.empty() ? "" : " " + r.detail) << '\n';
    } else {
      std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << " (" << r.cases << " cases, " << r.failures
                << " failures" << (r.detail.empty() ? "" : ", " + r.detail) << ")\n";
    }
  }
  if (!all) {
    std::cerr << "verify: oracle suite failed\n";
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int run_synth(const std::vector<std::string>& specs, std::uint64_t seed, double sigma, const std::string& out,
              Report& rep) {
  gq::sampling::Rng rng(seed);
  gq::TensorContainer c;
  for (const auto& s : specs) {
    const auto colon = s.find(':');
    const auto x = s.find('x', colon == std::string::npos ? 0 : colon);
    if (colon == std::string::npos || x == std::string::npos)
      throw gq::Error(gq::Errc::usage, "synth: expected NAME:ROWSxCOLS, got " + s);
    std::size_t rows = 0, cols = 0;
    try {
      rows = std::stoul(s.substr(colon + 1, x - colon - 1));
      cols = std::stoul(s.substr(x + 1));
    } catch (const std::exception&) {
      throw gq::Error(gq::Errc::usage, "synth: bad shape in " + s);
    }
    c.tensors.push_back(gq::NamedTensor::from_matrix(s.substr(0, colon), gq::sampling::gaussian_matrix(rng, rows, cols, sigma)));
  }
  gq::save_tensor_file(out, c);
  rep.section("");
  rep.put("out", out);
  rep.put("tensors", c.tensors.size());
  return 0;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  args = merge_config(std::move(args));

  CLI::App app{"goquant: dual-basis power-of-two weight quantization"};
  app.require_subcommand(1);
  app.fallthrough();
  bool porcelain = false;
  app.add_flag("--porcelain", porcelain, "key=value output");
  app.add_option("--config", "key=value defaults file (flags take precedence)");

  QuantizeArgs qa;
  auto* q = app.add_subcommand("quantize", "quantize a tensor container into a model file");
  q->add_option("--weights", qa.weights, "weights (.gqt)")->required();
  q->add_option("--calib", qa.calib, "calibration activations (.gqt), one tensor per weight name");
  q->add_option("--out", qa.out, "output model (.gq)")->required();
  q->add_option("--bits", qa.cfg.bits)->check(CLI::IsMember({3, 4}))->capture_default_str();
  q->add_option("--topology", qa.topology)->check(CLI::IsMember({"pot", "linear"}))->capture_default_str();
  q->add_option("--mode", qa.mode)->check(CLI::IsMember({"geo", "ref"}))->capture_default_str();
  q->add_option("--k", qa.cfg.k)->check(CLI::IsMember({1, 2}))->capture_default_str();
  q->add_option("--alpha", qa.cfg.alpha)->capture_default_str();
  q->add_option("--lambda", qa.cfg.lambda)->capture_default_str();
  q->add_option("--group", qa.cfg.macro, "macro-block size N")->capture_default_str();
  q->add_option("--micro", qa.cfg.micro, "micro-block size G")->capture_default_str();
  q->add_option("--act-bits", qa.cfg.act_bits)->check(CLI::IsMember({4, 6, 8, 16}))->capture_default_str();
  q->add_option("--scale-bits", qa.cfg.scale_bits)->capture_default_str();
  q->add_option("--norm-scope", qa.norm_scope)->check(CLI::IsMember({"channel", "block"}))->capture_default_str();

  EvalArgs ea;
  auto* e = app.add_subcommand("eval", "compare shift-add outputs with the float model");
  e->add_option("--model", ea.model)->required();
  e->add_option("--weights", ea.weights)->required();
  e->add_option("--inputs", ea.inputs)->required();
  e->add_option("--calib", ea.calib);
  e->add_option("--act-scale", ea.act_scale)->check(CLI::IsMember({"dynamic", "calib"}))->capture_default_str();
  e->add_option("--metrics", ea.metrics)->delimiter(',')->capture_default_str();

  std::string b_model, b_inputs;
  auto* b = app.add_subcommand("bench", "run the shift-add kernel and print operation counters");
  b->add_option("--model", b_model)->required();
  b->add_option("--inputs", b_inputs)->required();

  std::string i_model;
  auto* in = app.add_subcommand("inspect", "summarize a model file");
  in->add_option("--model", i_model)->required();

  gq::verify::Options vo;
  std::string fault = "none";
  auto* v = app.add_subcommand("verify", "run the brute-force oracle suite");
  v->add_option("--micro", vo.max_group, "largest G for exhaustive enumeration")->capture_default_str();
  v->add_flag("--big", vo.big, "allow G > 16");
  v->add_option("--trials", vo.trials)->capture_default_str();
  v->add_option("--seed", vo.seed)->capture_default_str();
  v->add_option("--inject-fault", fault, "test hook")->check(CLI::IsMember({"none", "sign-flip"}));

  std::vector<std::string> s_specs;
  std::uint64_t s_seed = 1;
  double s_sigma = 1.0;
  std::string s_out;
  auto* sy = app.add_subcommand("synth", "write Gaussian test tensors");
  sy->add_option("--tensor", s_specs, "NAME:ROWSxCOLS (repeatable)")->required();
  sy->add_option("--seed", s_seed)->capture_default_str();
  sy->add_option("--sigma", s_sigma)->capture_default_str();
  sy->add_option("--out", s_out)->required();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 1;
  }

  Report rep(porcelain);
  if (*q) return run_quantize(qa, rep);
  if (*e) return run_eval(ea, rep);
  if (*b) return run_bench(b_model, b_inputs, rep);
  if (*in) return run_inspect(i_model, rep);
  if (*v) {
    vo.fault = fault == "sign-flip" ? gq::verify::Fault::sign_flip : gq::verify::Fault::none;
    return run_verify(vo, rep);
  }
  if (*sy) return run_synth(s_specs, s_seed, s_sigma, s_out, rep);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const gq::Error& err) {
    std::cerr << "goquant: " << gq::errc_name(err.code()) << ": " << err.what() << '\n';
    return gq::exit_code(err.code());
  } catch (const std::bad_alloc&) {
    std::cerr << "goquant: out of memory\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "goquant: " << err.what() << '\n';
    return 2;
  }
}
