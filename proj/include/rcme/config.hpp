#pragma once

// Flat key=value run configuration shared by the CLI subcommands. Every key
// has a default; unknown keys are rejected; numeric values accept "pi"
// expressions ("pi/2", "0.75pi") since the margin lives in angle units.

#include "eval.hpp"
#include "trainer.hpp"

namespace rcme {

namespace detail {

inline double parse_real(const std::string& raw) {
  std::string s;
  for (char c : raw)
    if (!std::isspace((unsigned char)c)) s.push_back((char)std::tolower((unsigned char)c));
  if (s.empty()) throw ArgError("empty numeric value");
  double sign = 1.0;
  if (s[0] == '+' || s[0] == '-') {
    if (s[0] == '-') sign = -1.0;
    s.erase(0, 1);
  }
  double denom = 1.0;
  std::size_t slash = s.find('/');
  if (slash != std::string::npos) {
    std::string d = s.substr(slash + 1);
    s = s.substr(0, slash);
    try {
      std::size_t used = 0;
      denom = std::stod(d, &used);
      if (used != d.size() || denom == 0.0) throw std::invalid_argument(d);
    } catch (const std::exception&) {
      throw ArgError("bad denominator in numeric value: " + raw);
    }
  }
  double coeff = 1.0;
  bool has_pi = false;
  std::size_t pi = s.find("pi");
  if (pi != std::string::npos) {
    has_pi = true;
    std::string tail = s.substr(pi + 2);
    if (!tail.empty()) throw ArgError("bad numeric value: " + raw);
    s = s.substr(0, pi);
  }
  if (!s.empty()) {
    try {
      std::size_t used = 0;
      coeff = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ArgError("bad numeric value: " + raw);
    }
  } else if (!has_pi) {
    throw ArgError("bad numeric value: " + raw);
  }
  return sign * coeff * (has_pi ? kPi : 1.0) / denom;
}

inline bool parse_bool(const std::string& raw) {
  std::string s;
  for (char c : raw) s.push_back((char)std::tolower((unsigned char)c));
  s = trim(s);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ArgError("bad boolean value: " + raw);
}

inline long parse_int(const std::string& raw) {
  try {
    std::size_t used = 0;
    std::string s = trim(raw);
    long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ArgError("bad integer value: " + raw);
  }
}

}  // namespace detail

struct RunConfig {
  // geometry
  std::string geometry = "radial";
  int dim = 32;
  double epsilon_r = 0.1;
  double aperture_k = 0.1;
  // training
  std::uint64_t seed = 0;
  double learning_rate = 0.05;
  std::string optimizer = "adam";
  std::string schedule = "onecycle";
  int epochs = 1;
  int batch_size = 8;
  int accum = 2;
  double alpha = kPi / 2.0;
  double beta = 1.0;
  double temperature = 1.0;
  std::string cma_pairs = "matched";
  bool use_le = true, use_ge = true, use_cma = true, use_prior = false;
  double prior_weight = 1.0;
  std::string negative_mining = "hard";
  std::string init = "random";
  std::string init_path;
  int instances_per_leaf = 4;
  int threads = 1;
  // evaluation
  int steps = 50;
  int eval_queries = 50;
  std::uint64_t eval_seed = 1234;
  // io
  std::string delimiter = "|";

  void set(const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_int;
    using detail::parse_real;
    std::string v = detail::trim(value);
    if (key == "geometry") geometry = v;
    else if (key == "dim") dim = (int)parse_int(v);
    else if (key == "epsilon_r") epsilon_r = parse_real(v);
    else if (key == "aperture_k") aperture_k = parse_real(v);
    else if (key == "seed") seed = (std::uint64_t)parse_int(v);
    else if (key == "learning_rate") learning_rate = parse_real(v);
    else if (key == "optimizer") optimizer = v;
    else if (key == "schedule") schedule = v;
    else if (key == "epochs") epochs = (int)parse_int(v);
    else if (key == "batch_size") batch_size = (int)parse_int(v);
    else if (key == "accum") accum = (int)parse_int(v);
    else if (key == "alpha") alpha = parse_real(v);
    else if (key == "beta") beta = parse_real(v);
    else if (key == "temperature") temperature = parse_real(v);
    else if (key == "cma_pairs") cma_pairs = v;
    else if (key == "use_le") use_le = parse_bool(v);
    else if (key == "use_ge") use_ge = parse_bool(v);
    else if (key == "use_cma") use_cma = parse_bool(v);
    else if (key == "use_prior") use_prior = parse_bool(v);
    else if (key == "prior_weight") prior_weight = parse_real(v);
    else if (key == "negative_mining") negative_mining = v;
    else if (key == "init") init = v;
    else if (key == "init_path") init_path = v;
    else if (key == "instances_per_leaf") instances_per_leaf = (int)parse_int(v);
    else if (key == "threads") threads = (int)parse_int(v);
    else if (key == "steps") steps = (int)parse_int(v);
    else if (key == "eval_queries") eval_queries = (int)parse_int(v);
    else if (key == "eval_seed") eval_seed = (std::uint64_t)parse_int(v);
    else if (key == "delimiter") delimiter = v.empty() ? "|" : v;
    else throw ArgError("unknown config key: " + key);
  }

  void load(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      std::size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw ArgError("config line " + std::to_string(lineno) + ": expected key=value");
      set(detail::trim(t.substr(0, eq)), t.substr(eq + 1));
    }
  }

  void load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    load(f);
  }

  TrainConfig to_train_config() const {
    TrainConfig c;
    c.seed = seed;
    c.dim = dim;
    c.learning_rate = learning_rate;
    if (optimizer == "adam") c.optimizer = Optimizer::Adam;
    else if (optimizer == "momentum") c.optimizer = Optimizer::Momentum;
    else if (optimizer == "sgd") c.optimizer = Optimizer::SGD;
    else throw ArgError("unknown optimizer: " + optimizer);
    if (schedule == "onecycle") c.schedule = Schedule::OneCycle;
    else if (schedule == "constant") c.schedule = Schedule::Constant;
    else throw ArgError("unknown schedule: " + schedule);
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.accum = accum;
    c.params.alpha = alpha;
    c.params.beta = beta;
    c.params.temperature = temperature;
    c.params.batch_size = batch_size;
    if (geometry == "radial") c.geometry = GeoMode::Radial;
    else if (geometry == "euclidean") c.geometry = GeoMode::Euclidean;
    else throw ArgError("unknown geometry: " + geometry);
    c.epsilon_r = epsilon_r;
    c.aperture_k = aperture_k;
    if (negative_mining == "hard") c.negative_mining = NegativeMining::Hard;
    else if (negative_mining == "random") c.negative_mining = NegativeMining::Random;
    else throw ArgError("unknown negative_mining: " + negative_mining);
    if (init == "random") c.init = InitMode::RandomSphere;
    else if (init == "file") c.init = InitMode::FromFile;
    else throw ArgError("unknown init: " + init);
    c.init_path = init_path;
    c.toggles = {use_le, use_ge, use_cma, use_prior};
    c.prior_weight = prior_weight;
    if (cma_pairs == "matched") c.cma_cross_pairs = false;
    else if (cma_pairs == "cross") c.cma_cross_pairs = true;
    else throw ArgError("unknown cma_pairs: " + cma_pairs);
    c.instances_per_leaf = instances_per_leaf;
    c.threads = threads;
    return c;
  }

  EvalConfig to_eval_config() const {
    EvalConfig c;
    c.steps = steps;
    c.queries = eval_queries;
    c.seed = eval_seed;
    return c;
  }

  char delim_char() const {
    if (delimiter.size() != 1) throw ArgError("delimiter must be a single character");
    return delimiter[0];
  }

  void write(std::ostream& out) const {
    out << "geometry=" << geometry << "\n";
    out << "dim=" << dim << "\n";
    out << "epsilon_r=" << detail::fmt_double(epsilon_r) << "\n";
    out << "aperture_k=" << detail::fmt_double(aperture_k) << "\n";
    out << "seed=" << seed << "\n";
    out << "learning_rate=" << detail::fmt_double(learning_rate) << "\n";
    out << "optimizer=" << optimizer << "\n";
    out << "schedule=" << schedule << "\n";
    out << "epochs=" << epochs << "\n";
    out << "batch_size=" << batch_size << "\n";
    out << "accum=" << accum << "\n";
    out << "alpha=" << detail::fmt_double(alpha) << "\n";
    out << "beta=" << detail::fmt_double(beta) << "\n";
    out << "temperature=" << detail::fmt_double(temperature) << "\n";
    out << "cma_pairs=" << cma_pairs << "\n";
    out << "use_le=" << (use_le ? "true" : "false") << "\n";
    out << "use_ge=" << (use_ge ? "true" : "false") << "\n";
    out << "use_cma=" << (use_cma ? "true" : "false") << "\n";
    out << "use_prior=" << (use_prior ? "true" : "false") << "\n";
    out << "prior_weight=" << detail::fmt_double(prior_weight) << "\n";
    out << "negative_mining=" << negative_mining << "\n";
    out << "init=" << init << "\n";
    out << "init_path=" << init_path << "\n";
    out << "instances_per_leaf=" << instances_per_leaf << "\n";
    out << "threads=" << threads << "\n";
    out << "steps=" << steps << "\n";
    out << "eval_queries=" << eval_queries << "\n";
    out << "eval_seed=" << eval_seed << "\n";
    out << "delimiter=" << delimiter << "\n";
  }
};

}  // namespace rcme
