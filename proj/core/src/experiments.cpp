#include "gradlab/experiments.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gradlab/errors.hpp"
#include "gradlab/gradcheck.hpp"
#include "gradlab/layers.hpp"
#include "gradlab/revlearn.hpp"
#include "json.hpp"

namespace gradlab::lab {
namespace {

using nlohmann::json;

// ---------------------------------------------------------------- CSV ----

struct Csv {
  std::string buf;

  void row(std::initializer_list<std::string> cells) {
    bool first = true;
    for (const auto& c : cells) {
      if (!first) buf += ',';
      buf += c;
      first = false;
    }
    buf += '\n';
  }

  void write(const std::string& path) const {
    std::filesystem::path p(path);
    if (!p.parent_path().empty()) {
      std::error_code ec;
      std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open output file: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("failed writing output file: " + path);
  }
};

std::string fmt_u(std::uint64_t v) { return std::to_string(v); }
std::string fmt_i(std::int64_t v) { return std::to_string(v); }

// ---------------------------------------------------------- statistics ----

double median(std::vector<double> xs) {
  if (xs.empty()) throw DomainError("median of empty sample");
  std::sort(xs.begin(), xs.end());
  std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Gaussian elimination with partial pivoting; fine for the tiny systems the
// reports need.
Tensor solve_linear(Tensor a, Tensor b) {
  if (a.rank() != 2 || a.rows() != a.cols() || b.size() != a.rows())
    throw DimensionError("solve_linear: square system required");
  std::size_t n = a.rows();
  std::vector<double> x(b.values().begin(), b.values().end());
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t r = k + 1; r < n; ++r)
      if (std::abs(a.at2(r, k)) > std::abs(a.at2(piv, k))) piv = r;
    if (std::abs(a.at2(piv, k)) < 1e-14) throw DomainError("solve_linear: singular matrix");
    if (piv != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a.at2(piv, c), a.at2(k, c));
      std::swap(x[piv], x[k]);
    }
    for (std::size_t r = k + 1; r < n; ++r) {
      double f = a.at2(r, k) / a.at2(k, k);
      if (f == 0.0) continue;
      for (std::size_t c = k; c < n; ++c) a.at2(r, c) -= f * a.at2(k, c);
      x[r] -= f * x[k];
    }
  }
  for (std::size_t ri = n; ri-- > 0;) {
    for (std::size_t c = ri + 1; c < n; ++c) x[ri] -= a.at2(ri, c) * x[c];
    x[ri] /= a.at2(ri, ri);
  }
  return Tensor({n}, x);
}

Tensor random_orthogonal(std::size_t n, RngState& rng) {
  // Modified Gram-Schmidt on the columns of a Gaussian matrix.
  std::vector<double> q(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) q[i * n + j] = draw_normal(rng);
    for (std::size_t k = 0; k < j; ++k) {
      double d = 0;
      for (std::size_t i = 0; i < n; ++i) d += q[i * n + k] * q[i * n + j];
      for (std::size_t i = 0; i < n; ++i) q[i * n + j] -= d * q[i * n + k];
    }
    double nrm = 0;
    for (std::size_t i = 0; i < n; ++i) nrm += q[i * n + j] * q[i * n + j];
    nrm = std::sqrt(nrm);
    if (nrm < 1e-10) throw DomainError("random_orthogonal: degenerate draw");
    for (std::size_t i = 0; i < n; ++i) q[i * n + j] /= nrm;
  }
  return Tensor({n, n}, q);
}

// Q diag(lambda) Q^T with lambda uniform in (lo, hi), symmetrized.
Tensor random_spd(std::size_t n, double lo, double hi, RngState& rng) {
  Tensor q = random_orthogonal(n, rng);
  std::vector<double> lam(n);
  for (auto& l : lam) l = draw_uniform(rng, lo, hi);
  std::vector<double> h(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < n; ++k) s += q.at2(i, k) * lam[k] * q.at2(j, k);
      h[i * n + j] = s;
    }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.5 * (h[i * n + j] + h[j * n + i]);
      h[i * n + j] = h[j * n + i] = s;
    }
  return Tensor({n, n}, h);
}

Tensor normal_vector(std::size_t n, RngState& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = draw_normal(rng);
  return Tensor({n}, v);
}

// ------------------------------------------------------- config parsing ----

std::string joined(const std::string& base, const char* key) {
  return base.empty() ? std::string(key) : base + "." + key;
}

const json* find(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return nullptr;
  return &*it;
}

const json& need(const json& j, const char* key, const std::string& base) {
  const json* p = find(j, key);
  if (p == nullptr) throw ConfigError(joined(base, key), "missing required field");
  return *p;
}

void need_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
}

double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  return j.get<double>();
}

std::int64_t as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  return j.get<std::int64_t>();
}

std::uint64_t as_uint(const json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(j.get<std::int64_t>());
  throw ConfigError(path, "expected a non-negative integer");
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

double opt_number(const json& j, const char* key, const std::string& base, double dflt) {
  const json* p = find(j, key);
  return p ? as_number(*p, joined(base, key)) : dflt;
}

std::int64_t opt_int(const json& j, const char* key, const std::string& base, std::int64_t dflt) {
  const json* p = find(j, key);
  return p ? as_int(*p, joined(base, key)) : dflt;
}

layers::Activation parse_activation(const json& j, const std::string& path) {
  std::string s = as_string(j, path);
  if (s == "sigmoid") return layers::Activation::kSigmoid;
  if (s == "relu") return layers::Activation::kRelu;
  if (s == "elu") return layers::Activation::kElu;
  throw ConfigError(path, "unknown activation '" + s + "' (sigmoid, relu, elu)");
}

layers::OutputKind parse_output_kind(const json& j, const std::string& path) {
  std::string s = as_string(j, path);
  if (s == "linear") return layers::OutputKind::kLinear;
  if (s == "sigmoid") return layers::OutputKind::kSigmoid;
  throw ConfigError(path, "unknown output kind '" + s + "' (linear, sigmoid)");
}

train::LossKind parse_loss(const json& j, const std::string& path) {
  std::string s = as_string(j, path);
  if (s == "squared_error") return train::LossKind::kSquaredError;
  if (s == "bce") return train::LossKind::kBinaryCrossEntropy;
  throw ConfigError(path, "unknown loss '" + s + "' (squared_error, bce)");
}

data::Generator parse_generator(const json& j, const std::string& path) {
  std::string s = as_string(j, path);
  if (s == "gaussian_blobs") return data::Generator::kGaussianBlobs;
  if (s == "linear_teacher") return data::Generator::kLinearTeacher;
  if (s == "noisy_poly") return data::Generator::kNoisyPoly;
  throw ConfigError(path, "unknown generator '" + s + "' (gaussian_blobs, linear_teacher, noisy_poly)");
}

train::Model parse_model(const json& j, const std::string& base) {
  need_object(j, base);
  train::Model m;
  const json& dims = need(j, "layer_dims", base);
  if (!dims.is_array() || dims.size() < 2)
    throw ConfigError(joined(base, "layer_dims"), "expected an array of at least two layer sizes");
  m.spec.layer_dims.clear();
  for (std::size_t i = 0; i < dims.size(); ++i) {
    std::string p = joined(base, "layer_dims") + "[" + std::to_string(i) + "]";
    std::int64_t d = as_int(dims[i], p);
    if (d < 1) throw ConfigError(p, "layer size must be at least 1");
    m.spec.layer_dims.push_back(static_cast<std::size_t>(d));
  }
  if (const json* p = find(j, "activation"))
    m.spec.activation = parse_activation(*p, joined(base, "activation"));
  m.spec.elu_alpha = opt_number(j, "elu_alpha", base, m.spec.elu_alpha);
  m.spec.dropout_prob = opt_number(j, "dropout", base, m.spec.dropout_prob);
  if (const json* p = find(j, "output"))
    m.spec.output_kind = parse_output_kind(*p, joined(base, "output"));
  if (const json* p = find(j, "loss")) m.loss = parse_loss(*p, joined(base, "loss"));
  try {
    m.spec.validate();
  } catch (const Error& e) {
    throw ConfigError(base, e.what());
  }
  return m;
}

train::TrainConfig parse_train(const json& j, const std::string& base, std::uint64_t dflt_seed) {
  need_object(j, base);
  train::TrainConfig c;
  c.eta = as_number(need(j, "eta", base), joined(base, "eta"));
  std::int64_t bs = as_int(need(j, "batch_size", base), joined(base, "batch_size"));
  if (bs < 1) throw ConfigError(joined(base, "batch_size"), "batch size must be at least 1");
  c.batch_size = static_cast<std::size_t>(bs);
  c.max_epochs = static_cast<int>(opt_int(j, "max_epochs", base, c.max_epochs));
  if (const json* p = find(j, "clip_threshold"))
    c.clip_threshold = as_number(*p, joined(base, "clip_threshold"));
  if (const json* p = find(j, "early_stop")) {
    std::string ep = joined(base, "early_stop");
    need_object(*p, ep);
    train::EarlyStopConfig es;
    es.patience = static_cast<int>(opt_int(*p, "patience", ep, es.patience));
    es.min_delta = opt_number(*p, "min_delta", ep, es.min_delta);
    if (es.patience < 1) throw ConfigError(joined(ep, "patience"), "patience must be at least 1");
    c.early_stop = es;
  }
  c.seed = dflt_seed;
  if (const json* p = find(j, "seed")) c.seed = as_uint(*p, joined(base, "seed"));
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(base, e.what());
  }
  return c;
}

newton::NeumannConfig parse_neumann(const json& j, const std::string& base) {
  need_object(j, base);
  newton::NeumannConfig c;
  c.q = opt_number(j, "q", base, c.q);
  c.scale_margin = opt_number(j, "scale_margin", base, c.scale_margin);
  c.damping = opt_number(j, "damping", base, c.damping);
  c.repeats = static_cast<int>(opt_int(j, "repeats", base, c.repeats));
  c.tail_q = opt_number(j, "tail_q", base, c.tail_q);
  c.tail_weight = opt_number(j, "tail_weight", base, c.tail_weight);
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(base, e.what());
  }
  return c;
}

data::DatasetSpec parse_dataset(const json& j, const std::string& base) {
  need_object(j, base);
  data::DatasetSpec s;
  s.generator = parse_generator(need(j, "generator", base), joined(base, "generator"));
  std::int64_t nt = opt_int(j, "n_train", base, static_cast<std::int64_t>(s.n_train));
  std::int64_t nv = opt_int(j, "n_val", base, static_cast<std::int64_t>(s.n_val));
  std::int64_t dim = opt_int(j, "dim", base, static_cast<std::int64_t>(s.dim));
  if (nt < 1) throw ConfigError(joined(base, "n_train"), "need at least one training example");
  if (nv < 1) throw ConfigError(joined(base, "n_val"), "need at least one validation example");
  if (dim < 1) throw ConfigError(joined(base, "dim"), "dimension must be at least 1");
  s.n_train = static_cast<std::size_t>(nt);
  s.n_val = static_cast<std::size_t>(nv);
  s.dim = static_cast<std::size_t>(dim);
  s.noise_sigma = opt_number(j, "noise_sigma", base, s.noise_sigma);
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError(base, e.what());
  }
  return s;
}

HyperoptConfig parse_hyperopt(const json& j, const std::string& base) {
  need_object(j, base);
  HyperoptConfig c;
  c.outer_steps = static_cast<int>(opt_int(j, "outer_steps", base, c.outer_steps));
  c.beta = opt_number(j, "beta", base, c.beta);
  c.eta0 = opt_number(j, "eta0", base, c.eta0);
  c.inner_steps = static_cast<int>(opt_int(j, "inner_steps", base, c.inner_steps));
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(base, e.what());
  }
  return c;
}

const std::array<const char*, 8> kKinds = {
    "gradcheck",      "commute",  "neumann_mc", "revlearn_equiv",
    "hyperopt", "depth_diag", "earlystop_demo", "newton_vs_sgd"};

}  // namespace

// ----------------------------------------------------------- validation ----

void HyperoptConfig::validate() const {
  if (outer_steps < 1) throw DomainError("hyperopt: outer_steps must be at least 1");
  if (inner_steps < 1) throw DomainError("hyperopt: inner_steps must be at least 1");
  if (beta < 0) throw DomainError("hyperopt: beta must be non-negative");
  if (!(eta0 > 0)) throw DomainError("hyperopt: eta0 must be positive");
}

void ExperimentConfig::validate() const {
  bool known = false;
  for (const char* k : kKinds) known = known || kind == k;
  if (!known) throw ConfigError("kind", "unknown experiment kind '" + kind + "'");
  if (output_csv.empty()) throw ConfigError("output_csv", "must not be empty");
  if (mc_samples < 10) throw ConfigError("mc_samples", "need at least 10 samples");
  if (depth < 1) throw ConfigError("depth", "depth must be at least 1");

  auto require_model = [&] {
    if (!model) throw ConfigError("model", "required for kind '" + kind + "'");
  };
  auto require_dataset = [&] {
    if (!dataset) throw ConfigError("dataset", "required for kind '" + kind + "'");
  };
  auto require_train = [&] {
    if (!train) throw ConfigError("train", "required for kind '" + kind + "'");
  };

  if (kind == "gradcheck") require_model();
  if (kind == "commute") {
    require_model();
    require_dataset();
    if (dataset->n_train < 64)
      throw ConfigError("dataset.n_train", "commute compares batch sizes up to 64");
  }
  if (kind == "neumann_mc") {
    if (!neumann) throw ConfigError("neumann", "required for kind 'neumann_mc'");
  }
  if (kind == "revlearn_equiv" || kind == "earlystop_demo") {
    require_model();
    require_dataset();
    require_train();
  }
  if (kind == "earlystop_demo" && !train->early_stop)
    throw ConfigError("train.early_stop", "required for kind 'earlystop_demo'");
  if (kind == "hyperopt" && !hyperopt)
    throw ConfigError("hyperopt", "required for kind 'hyperopt'");
  if (kind == "newton_vs_sgd") {
    require_model();
    require_dataset();
    require_train();
    if (!neumann) throw ConfigError("neumann", "required for kind 'newton_vs_sgd'");
  }
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("$", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("$", "top-level value must be an object");

  ExperimentConfig cfg;
  cfg.kind = as_string(need(j, "kind", ""), "kind");
  cfg.seed = as_uint(need(j, "seed", ""), "seed");
  if (const json* p = find(j, "output_csv")) cfg.output_csv = as_string(*p, "output_csv");
  if (const json* p = find(j, "model")) cfg.model = parse_model(*p, "model");
  if (const json* p = find(j, "train")) cfg.train = parse_train(*p, "train", cfg.seed);
  if (const json* p = find(j, "neumann")) cfg.neumann = parse_neumann(*p, "neumann");
  if (const json* p = find(j, "dataset")) cfg.dataset = parse_dataset(*p, "dataset");
  if (const json* p = find(j, "hyperopt")) cfg.hyperopt = parse_hyperopt(*p, "hyperopt");
  cfg.depth = static_cast<int>(opt_int(j, "depth", "", cfg.depth));
  cfg.mc_samples = static_cast<int>(opt_int(j, "mc_samples", "", cfg.mc_samples));
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("$", "cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

namespace {
std::string fmt(double v) { return format_double(v); }
}

// ------------------------------------------------------------ gradcheck ----

Report run_gradcheck(const ExperimentConfig& cfg) {
  const train::Model& model = *cfg.model;
  const layers::ModelSpec& spec = model.spec;
  RngState root{cfg.seed, 0};

  Csv csv;
  csv.row({"point", "param", "coord", "analytic", "numeric", "rel_err", "kink_skipped"});

  double max_rel = 0.0;
  std::size_t checked = 0, skipped = 0;
  bool all_pass = true;
  const int points = 10;
  for (int point = 0; point < points; ++point) {
    RngState rng = root.substream(static_cast<std::uint64_t>(point));
    ad::ParamMap params = layers::init_mlp_params(spec, rng);
    Tensor x = normal_vector(spec.input_dim(), rng);
    std::vector<double> yv(spec.output_dim());
    for (auto& t : yv) {
      t = model.loss == train::LossKind::kBinaryCrossEntropy
              ? static_cast<double>(draw_below(rng, 2))
              : draw_normal(rng);
    }
    Tensor y(std::vector<std::size_t>{yv.size()}, yv);

    ad::ProgramFn f = [&model, x, y](ad::Tape& t) {
      RngState unused{0, 0};
      return train::example_loss(t, model, x, y, layers::Mode::kProduction, unused);
    };
    check::GradcheckResult res = check::gradcheck(f, params, {}, 1e-5, 1e-6);
    for (const auto& c : res.coordinates) {
      csv.row({fmt_i(point), c.param, fmt_u(c.index), fmt(c.analytic), fmt(c.numeric),
               fmt(c.rel_err), c.skipped_kink ? "1" : "0"});
    }
    max_rel = std::max(max_rel, res.max_rel_err);
    checked += res.checked;
    skipped += res.skipped_kinks;
    all_pass = all_pass && res.passed;
  }
  csv.write(cfg.output_csv);

  Report r;
  r.kind = cfg.kind;
  r.csv_path = cfg.output_csv;
  r.passed = all_pass && checked > 0;
  r.metrics = {{"max_rel_err", max_rel},
               {"coords_checked", static_cast<double>(checked)},
               {"kinks_skipped", static_cast<double>(skipped)}};
  r.summary = "gradcheck over " + std::to_string(points) + " random points: " +
              std::to_string(checked) + " coordinates, max rel err " + fmt(max_rel) + ", " +
              std::to_string(skipped) + " kink-skipped";
  return r;
}

// -------------------------------------------------------------- commute ----

Report run_commute(const ExperimentConfig& cfg) {
  const train::Model& model = *cfg.model;
  auto [tr, val] = data::generate_dataset(*cfg.dataset, cfg.seed);
  (void)val;
  RngState rng = RngState{cfg.seed, 0}.substream(10);
  ad::ParamMap params = layers::init_mlp_params(model.spec, rng);

  Csv csv;
  csv.row({"batch_size", "max_abs_diff"});
  double worst = 0.0;
  for (std::size_t b : {std::size_t{1}, std::size_t{7}, std::size_t{64}}) {
    std::vector<std::uint32_t> idx(b);
    for (std::size_t i = 0; i < b; ++i) idx[i] = static_cast<std::uint32_t>(i);
    train::Dataset sub;
    sub.inputs.assign(tr.inputs.begin(), tr.inputs.begin() + static_cast<std::ptrdiff_t>(b));
    sub.targets.assign(tr.targets.begin(), tr.targets.begin() + static_cast<std::ptrdiff_t>(b));

    ad::Gradient left = train::grad_of_mean(model, params, tr, idx);
    ad::Gradient right = train::grad_mean(model, params, sub);
    double diff = 0.0;
    for (const auto& [name, g] : left.by_parameter) {
      const Tensor& h = right.by_parameter.at(name);
      for (std::size_t i = 0; i < g.size(); ++i) diff = std::max(diff, std::abs(g[i] - h[i]));
    }
    worst = std::max(worst, diff);
    csv.row({fmt_u(b), fmt(diff)});
  }
  csv.write(cfg.output_csv);

  Report r;
  r.kind = cfg.kind;
  r.csv_path = cfg.output_csv;
  r.passed = worst < 1e-12;
  r.metrics = {{"max_abs_diff", worst}};
  r.summary = "sum-then-differentiate vs differentiate-then-average: max elementwise diff " +
              fmt(worst) + " over batch sizes 1, 7, 64";
  return r;
}

// ----------------------------------------------------------- neumann_mc ----

namespace {

struct McCase {
  std::string name;
  std::size_t dim = 0;
  newton::HvpOracle oracle;
  double c = 1.0;  // multiply estimates by this (scaled stochastic oracle)
  newton::NeumannConfig cfg;
  Tensor v{std::vector<std::size_t>{0}, {}};
  Tensor exact{std::vector<std::size_t>{0}, {}};
};

struct McOutcome {
  double max_dev_sigmas = 0.0;
  bool ok = true;
};

McOutcome run_mc_case(const McCase& c, int samples, RngState& rng, Csv& csv) {
  std::size_t d = c.dim;
  std::vector<double> mean(d, 0.0), m2(d, 0.0);
  for (int s = 0; s < samples; ++s) {
    Tensor est = newton::estimate_hinv_v(c.oracle, c.v, c.cfg, rng);
    for (std::size_t i = 0; i < d; ++i) {
      double x = c.c * est[i];
      double delta = x - mean[i];
      mean[i] += delta / static_cast<double>(s + 1);
      m2[i] += delta * (x - mean[i]);
    }
  }
  McOutcome out;
  double n = static_cast<double>(samples);
  for (std::size_t i = 0; i < d; ++i) {
    double se = std::sqrt(m2[i] / (n * (n - 1.0)));
    double dev = std::abs(mean[i] - c.exact[i]);
    double sig = se > 0 ? dev / se : (dev == 0 ? 0.0 : std::numeric_limits<double>::infinity());
    bool ok = dev <= 3.0 * se + 1e-12;
    out.ok = out.ok && ok;
    out.max_dev_sigmas = std::max(out.max_dev_sigmas, sig);
    csv.row({c.name, fmt_u(c.dim), fmt_u(i), fmt(c.exact[i]), fmt(mean[i]), fmt(se), fmt(sig)});
  }
  return out;
}

}  // namespace

Report run_neumann_mc(const ExperimentConfig& cfg) {
  newton::NeumannConfig base = *cfg.neumann;
  base.repeats = 1;  // the point is the distribution of single-draw estimates
  RngState root{cfg.seed, 0};

  std::vector<McCase> cases;
  const std::array<std::size_t, 5> dims = {2, 5, 10, 5, 10};
  for (std::size_t k = 0; k < dims.size(); ++k) {
    RngState gen = root.substream(k);
    McCase c;
    c.name = "spd" + std::to_string(k);
    c.dim = dims[k];
    Tensor h = random_spd(dims[k], 0.15, 0.85, gen);
    c.oracle = newton::make_matrix_oracle(h);
    c.cfg = base;
    c.v = normal_vector(dims[k], gen);
    c.exact = solve_linear(h, c.v);
    cases.push_back(std::move(c));
  }
  {
    // Analytic case: H = diag(0.5, 0.5), so H^{-1} v = 2v.
    RngState gen = root.substream(5);
    McCase c;
    c.name = "diag_half";
    c.dim = 2;
    c.oracle = newton::make_matrix_oracle(Tensor({2, 2}, {0.5, 0.0, 0.0, 0.5}));
    c.cfg = base;
    c.v = normal_vector(2, gen);
    c.exact = Tensor({2}, {2.0 * c.v[0], 2.0 * c.v[1]});
    cases.push_back(std::move(c));
  }
  {
    // Stochastic minibatch oracle on a logistic-regression Hessian (damped).
    data::DatasetSpec dspec;
    dspec.generator = data::Generator::kGaussianBlobs;
    dspec.n_train = 24;
    dspec.n_val = 1;
    dspec.noise_sigma = 0.6;
    dspec.dim = 4;
    if (cfg.dataset && cfg.dataset->generator == data::Generator::kGaussianBlobs)
      dspec = *cfg.dataset;
    auto [tr, val] = data::generate_dataset(dspec, cfg.seed);
    (void)val;
    train::Model logreg;
    logreg.spec.layer_dims = {dspec.dim, 1};
    logreg.spec.output_kind = layers::OutputKind::kSigmoid;
    logreg.loss = train::LossKind::kBinaryCrossEntropy;

    RngState gen = root.substream(6);
    ad::ParamMap params = layers::init_mlp_params(logreg.spec, gen);
    std::size_t d = ad::param_count(params);

    // Exact damped Hessian column by column for the brute-force target.
    newton::HvpOracle exact = newton::stochastic_hvp_oracle(logreg, params, tr, tr.size());
    std::vector<double> hm(d * d, 0.0);
    RngState unused{0, 0};
    for (std::size_t j = 0; j < d; ++j) {
      std::vector<double> e(d, 0.0);
      e[j] = 1.0;
      Tensor col = exact.apply(Tensor({d}, e), unused);
      for (std::size_t i = 0; i < d; ++i) hm[i * d + j] = col[i];
      hm[j * d + j] += base.damping;
    }

    std::size_t batch = cfg.train ? cfg.train->batch_size : 8;
    newton::HvpOracle stoch = newton::stochastic_hvp_oracle(logreg, params, tr, batch);
    newton::ScaledOracle scaled = newton::scale_oracle(stoch, base);

    McCase c;
    c.name = "logistic_stochastic";
    c.dim = d;
    c.oracle = scaled.oracle;
    c.c = scaled.c;
    c.cfg = base;
    c.cfg.q = std::max(base.q, newton::auto_q(scaled));
    newton::validate_truncation(c.cfg, scaled);
    c.v = normal_vector(d, gen);
    c.exact = solve_linear(Tensor({d, d}, hm), c.v);
    cases.push_back(std::move(c));
  }

  Csv csv;
  csv.row({"case", "dim", "coord", "exact", "mc_mean", "std_err", "dev_sigmas"});
  bool all_ok = true;
  double max_sig = 0.0;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    RngState mc = root.substream(100 + k);
    McOutcome out = run_mc_case(cases[k], cfg.mc_samples, mc, csv);
    all_ok = all_ok && out.ok;
    max_sig = std::max(max_sig, out.max_dev_sigmas);
  }
  csv.write(cfg.output_csv);

  Report r;
  r.kind = cfg.kind;
  r.csv_path = cfg.output_csv;
  r.passed = all_ok;
  r.metrics = {{"cases", static_cast<double>(cases.size())},
               {"samples_per_case", static_cast<double>(cfg.mc_samples)},
               {"max_dev_sigmas", max_sig}};
  r.summary = "Neumann estimator means vs direct solves over " + std::to_string(cases.size()) +
              " cases, " + std::to_string(cfg.mc_samples) +
              " single-draw estimates each: worst deviation " + fmt(max_sig) + " standard errors";
  return r;
}

// ------------------------------------------------------- revlearn_equiv ----

Report run_revlearn_equiv(const ExperimentConfig& cfg) {
  const train::Model& model = *cfg.model;
  const train::TrainConfig& tc = *cfg.train;
  auto [tr, val] = data::generate_dataset(*cfg.dataset, cfg.seed);

  RngState init = RngState{tc.seed, 0}.substream(0);
  ad::ParamMap w0 = layers::init_mlp_params(model.spec, init);

  rev::SgdRun run = rev::make_run(tr.size(), tc, tc.max_epochs);
  rev::BatchProgram obj = rev::make_batch_objective(model, tr);
  ad::ProgramFn vobj = rev::make_validation_objective(model, val);

  rev::ForwardRecord fwd = rev::train_forward_record(obj, w0, run);

  std::string trace_path = cfg.output_csv + ".trace";
  rev::save_trace(fwd.trace, trace_path);
  rev::ResidualTrace loaded = rev::load_trace(trace_path);

  rev::Hypergrad replay = rev::reverse_replay_hypergrad(obj, fwd.wT, loaded, vobj);
  rev::FullTapeResult full = rev::hypergrad_full_tape(obj, w0, run, vobj);

  double d_eta_diff = std::abs(replay.d_eta - full.hypergrad.d_eta);
  double d_w0_diff = 0.0;
  for (const auto& [name, t] : replay.d_w0) {
    const Tensor& u = full.hypergrad.d_w0.at(name);
    for (std::size_t i = 0; i < t.size(); ++i)
      d_w0_diff = std::max(d_w0_diff, std::abs(t[i] - u[i]));
  }

  // Finite-difference check of d_eta through the full training run.
  double h = 1e-4;
  auto val_at_eta = [&](double eta) {
    rev::SgdRun r2 = run;
    r2.eta = eta;
    rev::ForwardRecord f2 = rev::train_forward_record(obj, w0, r2);
    return ad::eval_value(vobj, f2.wT, {});
  };
  double fd = (val_at_eta(run.eta + h) - val_at_eta(run.eta - h)) / (2.0 * h);
  double fd_rel = std::abs(fd - replay.d_eta) / std::max(1e-12, std::abs(fd));

  std::size_t encoded = fwd.trace.encoded_bytes();
  std::size_t raw = fwd.trace.raw_trajectory_bytes();
  double ratio = static_cast<double>(encoded) / static_cast<double>(raw);
  double final_val = ad::eval_value(vobj, fwd.wT, {});

  Csv csv;
  csv.row({"metric", "value"});
  csv.row({"steps", fmt_u(fwd.trace.steps)});
  csv.row({"weight_count", fmt_u(fwd.trace.weight_count)});
  csv.row({"final_val_loss", fmt(final_val)});
  csv.row({"d_eta_replay", fmt(replay.d_eta)});
  csv.row({"d_eta_full_tape", fmt(full.hypergrad.d_eta)});
  csv.row({"d_eta_abs_diff", fmt(d_eta_diff)});
  csv.row({"d_w0_max_abs_diff", fmt(d_w0_diff)});
  csv.row({"d_eta_fd", fmt(fd)});
  csv.row({"d_eta_fd_rel_err", fmt(fd_rel)});
  csv.row({"encoded_bytes", fmt_u(encoded)});
  csv.row({"raw_trajectory_bytes", fmt_u(raw)});
  csv.row({"compression_ratio", fmt(ratio)});
  csv.row({"full_tape_stored_reals", fmt_u(full.stored_reals)});
  csv.write(cfg.output_csv);

  Report r;
  r.kind = cfg.kind;
  r.csv_path = cfg.output_csv;
  r.passed = d_eta_diff <= 1e-12 && d_w0_diff <= 1e-12 && fd_rel < 1e-4 && encoded < raw;
  r.metrics = {{"d_eta_replay", replay.d_eta},
               {"d_eta_abs_diff", d_eta_diff},
               {"d_w0_max_abs_diff", d_w0_diff},
               {"d_eta_fd_rel_err", fd_rel},
               {"compression_ratio", ratio}};
  r.summary = "reverse replay vs full tape over " + std::to_string(fwd.trace.steps) +
              " steps: d_eta diff " + fmt(d_eta_diff) + ", d_w0 diff " + fmt(d_w0_diff) +
              ", FD rel err " + fmt(fd_rel) + ", trace " + std::to_string(encoded) + "/" +
              std::to_string(raw) + " bytes (ratio " + fmt(ratio) + ")";
  return r;
}

// ------------------------------------------------------------- hyperopt ----

Report run_hyperopt(const ExperimentConfig& cfg) {
  const HyperoptConfig& hc = *cfg.hyperopt;
  // Inner problem: E(w) = w^2 starting from w = 1. Gradient descent contracts
  // w by (1 - 2 eta) per step, so the validation loss (1 - 2 eta)^(2T) is
  // minimized at eta* = 1/2.
  const double eta_star = 0.5;

  rev::BatchProgram obj = [](ad::Tape& t, const std::vector<std::uint32_t>&) {
    ad::Var w = t.param("w");
    return ad::reduce_sum(ad::mul(w, w));
  };
  ad::ProgramFn vobj = [](ad::Tape& t) {
    ad::Var w = t.param("w");
    return ad::reduce_sum(ad::mul(w, w));
  };
  ad::ParamMap w0{{"w", Tensor::vector({1.0})}};

  Csv csv;
  csv.row({"outer_step", "eta", "val_loss", "d_eta_replay", "d_eta_full_tape", "abs_diff"});

  double eta = hc.eta0;
  double max_diff = 0.0;
  bool monotone = true;
  bool agree = true;
  for (int k = 0; k < hc.outer_steps; ++k) {
    rev::SgdRun run;
    run.eta = eta;
    run.seed = cfg.seed;
    run.schedule.assign(static_cast<std::size_t>(hc.inner_steps), {0u});

    rev::ForwardRecord fwd = rev::train_forward_record(obj, w0, run);
    rev::Hypergrad replay = rev::reverse_replay_hypergrad(obj, fwd.wT, fwd.trace, vobj);
    rev::FullTapeResult full = rev::hypergrad_full_tape(obj, w0, run, vobj);
    double diff = std::abs(replay.d_eta - full.hypergrad.d_eta);
    max_diff = std::max(max_diff, diff);
    agree = agree && diff <= 1e-12;
    double vl = ad::eval_value(vobj, fwd.wT, {});
    csv.row({fmt_i(k), fmt(eta), fmt(vl), fmt(replay.d_eta), fmt(full.hypergrad.d_eta),
             fmt(diff)});

    double next = std::max(1e-8, eta - hc.beta * replay.d_eta);
    if (std::abs(next - eta_star) > std::abs(eta - eta_star) + 1e-12) monotone = false;
    eta = next;
  }
  csv.write(cfg.output_csv);

  Report r;
  r.kind = cfg.kind;
  r.csv_path = cfg.output_csv;
  r.passed = agree && monotone;
  r.metrics = {{"final_eta", eta},
               {"eta_star", eta_star},
               {"max_replay_full_diff", max_diff}};
  r.summary = "outer gradient descent on eta: " + std::to_string(hc.outer_steps) +
              " steps, eta " + fmt(hc.eta0) + " -> " + fmt(eta) + " (optimum " + fmt(eta_star) +
              "), replay vs full-tape d_eta max diff " + fmt(max_diff);
  return r;
}

// ----------------------------------------------------------- depth_diag ----

Report run_depth_diag(const ExperimentConfig& cfg) {
  const int depth = cfg.depth;  // number of weight layers
  const std::size_t width = 12;
  std::vector<std::size_t> dims(static_cast<std::size_t>(depth) + 1, width);
  dims.back() = 1;

  const int seeds = 20;
  Csv csv;
  csv.row({"activation", "seed", "layer", "grad_norm"});

  RngState root{cfg.seed, 0};
  std::array<std::vector<double>, 2> ratios;
  const std::array<layers::Activation, 2> acts = {layers::Activation::kSigmoid,
                                                  layers::Activation::kRelu};
  const std::array<const char*, 2> act_names = {"sigmoid", "relu"};

  for (std::size_t a = 0; a < acts.size(); ++a) {
    train::Model model;
    model.spec.layer_dims = dims;
    model.spec.activation = acts[a];
    model.loss = train::LossKind::kSquaredError;
    for (int s = 0; s < seeds; ++s) {
      RngState rng = root.substream(a * static_cast<std::size_t>(seeds) + static_cast<std::size_t>(s));
      ad::ParamMap params = layers::init_mlp_params(model.spec, rng);
      Tensor x = normal_vector(width, rng);
      Tensor y = normal_vector(1, rng);
      ad::ProgramFn f = [&model, x, y](ad::Tape& t) {
        RngState unused{0, 0};
        return train::example_loss(t, model, x, y, layers::Mode::kProduction, unused);
      };
      ad::Gradient g = ad::grad(f, params, {});
      std::vector<double> norms(static_cast<std::size_t>(depth));
      for (int l = 0; l < depth; ++l) {
        const Tensor& gw = g.by_parameter.at(layers::weight_name(static_cast<std::size_t>(l)));
        double n2 = 0;
        for (std::size_t i = 0; i < gw.size(); ++i) n2 += gw[i] * gw[i];
        norms[static_cast<std::size_t>(l)] = std::sqrt(n2);
        csv.row({act_names[a], fmt_i(s), fmt_i(l), fmt(norms[static_cast<std::size_t>(l)])});
      }
      double last = norms.back();
      ratios[a].push_back(last > 0 ? norms.front() / last
                                   : std::numeric_limits<double>::quiet_NaN());
    }
  }
  csv.write(cfg.output_csv);

  double med_sig = median(ratios[0]);
  double med_relu = median(ratios[1]);

  Report r;
  r.kind = cfg.kind;
  r.csv_path = cfg.output_csv;
  r.passed = std::isfinite(med_sig) && std::isfinite(med_relu) && med_sig < med_relu;
  r.metrics = {{"median_ratio_sigmoid", med_sig},
               {"median_ratio_relu", med_relu},
               {"depth", static_cast<double>(depth)}};
  r.summary = "first/last weight-gradient norm ratio at depth " + std::to_string(depth) +
              " over " + std::to_string(seeds) + " seeds: median sigmoid " + fmt(med_sig) +
              ", median relu " + fmt(med_relu);
  return r;
}

// ------------------------------------------------------- earlystop_demo ----

Report run_earlystop_demo(const ExperimentConfig& cfg) {
  const train::Model& model = *cfg.model;
  auto [tr, val] = data::generate_dataset(*cfg.dataset, cfg.seed);
  train::TrainResult res = train::train(model, tr, val, *cfg.train);

  Csv csv;
  csv.row({"epoch", "train_loss", "val_loss"});
  for (const auto& e : res.history) csv.row({fmt_i(e.epoch), fmt(e.train_loss), fmt(e.val_loss)});
  csv.write(cfg.output_csv);

  double final_val = res.history.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : res.history.back().val_loss;
  double returned_val = train::loss_mean(model, res.params, val);

  Report r;
  r.kind = cfg.kind;
  r.csv_path = cfg.output_csv;
  r.passed = res.stopped_early && returned_val <= final_val;
  r.metrics = {{"epochs_run", static_cast<double>(res.epochs_run)},
               {"max_epochs", static_cast<double>(cfg.train->max_epochs)},
               {"returned_val_loss", returned_val},
               {"final_val_loss", final_val}};
  r.summary = std::string("early stopping ") + (res.stopped_early ? "halted" : "did not halt") +
              " at epoch " + std::to_string(res.epochs_run) + "/" +
              std::to_string(cfg.train->max_epochs) + "; returned val loss " + fmt(returned_val) +
              " vs final " + fmt(final_val);
  return r;
}

// -------------------------------------------------------- newton_vs_sgd ----

Report run_newton_vs_sgd(const ExperimentConfig& cfg) {
  const train::Model& model = *cfg.model;
  const train::TrainConfig& tc = *cfg.train;
  auto [tr, val] = data::generate_dataset(*cfg.dataset, cfg.seed);
  (void)val;

  RngState init = RngState{tc.seed, 0}.substream(0);
  ad::ParamMap w0 = layers::init_mlp_params(model.spec, init);
  double loss0 = train::loss_mean(model, w0, tr);
  double target = 0.3 * loss0;

  std::size_t steps_per_epoch = (tr.size() + tc.batch_size - 1) / tc.batch_size;
  std::size_t cap = static_cast<std::size_t>(tc.max_epochs) * steps_per_epoch;

  Csv csv;
  csv.row({"method", "eta", "iterations", "reached", "final_loss"});

  std::size_t best_sgd = cap + 1;
  for (double eta : {0.01, 0.1, 1.0}) {
    ad::ParamMap w = w0;
    RngState shuffle = RngState{tc.seed, 0}.substream(1);
    std::size_t iters = 0;
    bool reached = false;
    double cur = loss0;
    while (iters < cap && !reached) {
      auto schedule = train::epoch_schedule(tr.size(), tc.batch_size, shuffle);
      for (const auto& batch : schedule) {
        ad::Gradient g = train::grad_of_mean(model, w, tr, batch);
        w = train::sgd_step(w, g, eta);
        ++iters;
        cur = train::loss_mean(model, w, tr);
        if (cur <= target || iters >= cap) break;
      }
      reached = cur <= target;
    }
    if (reached) best_sgd = std::min(best_sgd, iters);
    csv.row({"sgd", fmt(eta), fmt_u(iters), reached ? "1" : "0", fmt(cur)});
  }

  newton::NewtonConfig ncfg;
  ncfg.neumann = *cfg.neumann;
  ncfg.batch_size = tc.batch_size;
  ncfg.alpha = 1.0;
  ad::ParamMap w = w0;
  RngState nrng = RngState{tc.seed, 0}.substream(2);
  std::size_t newton_iters = 0;
  bool newton_reached = false;
  double cur = loss0;
  while (newton_iters < cap && !newton_reached) {
    w = newton::stochastic_newton_step(model, w, tr, ncfg, nrng);
    ++newton_iters;
    cur = train::loss_mean(model, w, tr);
    newton_reached = cur <= target;
  }
  csv.row({"newton", fmt(ncfg.alpha), fmt_u(newton_iters), newton_reached ? "1" : "0", fmt(cur)});
  csv.write(cfg.output_csv);

  Report r;
  r.kind = cfg.kind;
  r.csv_path = cfg.output_csv;
  r.passed = newton_reached && newton_iters < best_sgd;
  r.metrics = {{"target_loss", target},
               {"newton_iterations", static_cast<double>(newton_iters)},
               {"best_sgd_iterations",
                static_cast<double>(best_sgd > cap ? cap : best_sgd)}};
  r.summary = "iterations to reach mean loss " + fmt(target) + ": newton " +
              std::to_string(newton_iters) + (newton_reached ? "" : " (not reached)") +
              ", best sgd " +
              (best_sgd > cap ? "not reached within " + std::to_string(cap)
                              : std::to_string(best_sgd));
  return r;
}

// ------------------------------------------------------------- dispatch ----

Report run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.kind == "gradcheck") return run_gradcheck(cfg);
  if (cfg.kind == "commute") return run_commute(cfg);
  if (cfg.kind == "neumann_mc") return run_neumann_mc(cfg);
  if (cfg.kind == "revlearn_equiv") return run_revlearn_equiv(cfg);
  if (cfg.kind == "hyperopt") return run_hyperopt(cfg);
  if (cfg.kind == "depth_diag") return run_depth_diag(cfg);
  if (cfg.kind == "earlystop_demo") return run_earlystop_demo(cfg);
  if (cfg.kind == "newton_vs_sgd") return run_newton_vs_sgd(cfg);
  throw ConfigError("kind", "unknown experiment kind '" + cfg.kind + "'");
}

}  // namespace gradlab::lab
