#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedprotip/csv.hpp"
#include "fedprotip/data.hpp"
#include "fedprotip/errors.hpp"
#include "fedprotip/fedcl.hpp"
#include "fedprotip/metrics.hpp"
#include "fedprotip/model.hpp"

namespace fedprotip::harness {

enum class Method { fedavg, fedprotip_no_tip, fedprotip };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::fedavg: return "fedavg";
    case Method::fedprotip_no_tip: return "fedprotip_no_tip";
    case Method::fedprotip: return "fedprotip";
  }
  return "unknown";
}

inline Method parse_method(const std::string& name) {
  if (name == "fedavg") return Method::fedavg;
  if (name == "fedprotip_no_tip") return Method::fedprotip_no_tip;
  if (name == "fedprotip") return Method::fedprotip;
  throw ConfigError("unknown method '" + name + "'");
}

inline EvalMode parse_eval_mode(const std::string& name) {
  if (name == "task_aware") return EvalMode::task_aware;
  if (name == "agnostic_no_tip") return EvalMode::agnostic_no_tip;
  if (name == "agnostic_tip") return EvalMode::agnostic_tip;
  throw ConfigError("unknown eval mode '" + name + "'");
}

// --- structured-text parser (flat key-value with [sections]) -----------------
// Values: "strings", booleans, numbers, and homogeneous [arrays] of strings or
// numbers. Unknown keys and sections are hard errors so a typo cannot
// silently misconfigure a run.

namespace cfg_detail {

struct Value {
  enum class Kind { string, number, boolean, string_array, number_array };
  Kind kind = Kind::string;
  std::string str;   // string value, or the raw token for numbers
  double num = 0.0;
  bool boolean = false;
  std::vector<std::string> str_arr;
  std::vector<double> num_arr;
  std::vector<std::string> raw_arr;  // raw tokens of number arrays
  int line = 0;
};

using Section = std::map<std::string, Value>;
using Document = std::map<std::string, Section>;

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

inline Value parse_scalar(const std::string& token, int line) {
  Value v;
  v.line = line;
  if (token.size() >= 2 && token.front() == '"' && token.back() == '"') {
    v.kind = Value::Kind::string;
    v.str = token.substr(1, token.size() - 2);
    return v;
  }
  if (token == "true" || token == "false") {
    v.kind = Value::Kind::boolean;
    v.boolean = token == "true";
    return v;
  }
  char* end = nullptr;
  const double num = std::strtod(token.c_str(), &end);
  if (end && *end == '\0' && end != token.c_str()) {
    v.kind = Value::Kind::number;
    v.num = num;
    v.str = token;
    return v;
  }
  throw ConfigError("line " + std::to_string(line) + ": cannot parse value '" +
                    token + "'");
}

inline Value parse_value(const std::string& token, int line) {
  if (!token.empty() && token.front() == '[') {
    if (token.back() != ']')
      throw ConfigError("line " + std::to_string(line) + ": unterminated array");
    Value v;
    v.line = line;
    const std::string inner = token.substr(1, token.size() - 2);
    std::vector<std::string> parts;
    std::string cur;
    bool quoted = false;
    for (char c : inner) {
      if (c == '"') quoted = !quoted;
      if (c == ',' && !quoted) {
        parts.push_back(trim(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty()) parts.push_back(trim(cur));
    bool any_string = false, any_number = false;
    for (const auto& p : parts) {
      const Value elem = parse_scalar(p, line);
      if (elem.kind == Value::Kind::string) {
        any_string = true;
        v.str_arr.push_back(elem.str);
      } else if (elem.kind == Value::Kind::number) {
        any_number = true;
        v.num_arr.push_back(elem.num);
        v.raw_arr.push_back(elem.str);
      } else {
        throw ConfigError("line " + std::to_string(line) +
                          ": arrays may hold strings or numbers only");
      }
    }
    if (any_string && any_number)
      throw ConfigError("line " + std::to_string(line) +
                        ": mixed-type array");
    v.kind = any_string ? Value::Kind::string_array : Value::Kind::number_array;
    return v;
  }
  return parse_scalar(token, line);
}

inline Document parse_document(const std::string& text) {
  Document doc;
  std::istringstream is(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(line_no) +
                          ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("line " + std::to_string(line_no) +
                          ": empty section name");
      doc[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (section.empty())
      throw ConfigError("line " + std::to_string(line_no) +
                        ": key '" + key + "' outside any section");
    if (doc[section].count(key))
      throw ConfigError("line " + std::to_string(line_no) +
                        ": duplicate key '" + key + "' in [" + section + "]");
    doc[section][key] = parse_value(value, line_no);
  }
  return doc;
}

// Tracks key consumption so leftovers can be reported as hard errors.
class SectionReader {
 public:
  SectionReader(const Document& doc, const std::string& name) : name_(name) {
    const auto it = doc.find(name);
    section_ = it == doc.end() ? nullptr : &it->second;
  }

  bool has(const std::string& key) const {
    return section_ && section_->count(key);
  }

  const Value& get(const std::string& key) {
    if (!section_ || !section_->count(key))
      throw ConfigError("missing key '" + key + "' in [" + name_ + "]");
    used_.insert(key);
    return section_->at(key);
  }

  std::string get_string(const std::string& key) {
    const Value& v = get(key);
    if (v.kind != Value::Kind::string)
      throw ConfigError(where(v) + ": '" + key + "' must be a string");
    return v.str;
  }

  double get_double(const std::string& key) {
    const Value& v = get(key);
    if (v.kind != Value::Kind::number)
      throw ConfigError(where(v) + ": '" + key + "' must be a number");
    return v.num;
  }

  std::size_t get_count(const std::string& key) {
    const Value& v = get(key);
    if (v.kind != Value::Kind::number || v.num < 0 ||
        v.num != std::floor(v.num))
      throw ConfigError(where(v) + ": '" + key +
                        "' must be a non-negative integer");
    return static_cast<std::size_t>(v.num);
  }

  std::uint64_t get_u64(const std::string& key) {
    const Value& v = get(key);
    if (v.kind != Value::Kind::number)
      throw ConfigError(where(v) + ": '" + key + "' must be an integer");
    char* end = nullptr;
    const std::uint64_t out = std::strtoull(v.str.c_str(), &end, 10);
    if (!end || *end != '\0')
      throw ConfigError(where(v) + ": '" + key +
                        "' must be an unsigned integer");
    return out;
  }

  bool get_bool(const std::string& key) {
    const Value& v = get(key);
    if (v.kind != Value::Kind::boolean)
      throw ConfigError(where(v) + ": '" + key + "' must be true or false");
    return v.boolean;
  }

  std::vector<double> get_number_array(const std::string& key) {
    const Value& v = get(key);
    if (v.kind != Value::Kind::number_array)
      throw ConfigError(where(v) + ": '" + key + "' must be a number array");
    return v.num_arr;
  }

  std::vector<std::string> get_string_array(const std::string& key) {
    const Value& v = get(key);
    if (v.kind != Value::Kind::string_array)
      throw ConfigError(where(v) + ": '" + key + "' must be a string array");
    return v.str_arr;
  }

  void finish() const {
    if (!section_) return;
    for (const auto& [key, value] : *section_)
      if (!used_.count(key))
        throw ConfigError("line " + std::to_string(value.line) +
                          ": unknown key '" + key + "' in [" + name_ + "]");
  }

 private:
  std::string where(const Value& v) const {
    return "line " + std::to_string(v.line);
  }

  std::string name_;
  const Section* section_ = nullptr;
  std::set<std::string> used_;
};

}  // namespace cfg_detail

// Full experiment description. The single [run] seed is the master: data,
// partition and training streams are derived from it.
struct ExperimentConfig {
  // [data]
  data::Regime regime = data::Regime::class_incremental;
  std::size_t num_tasks = 1;
  std::size_t classes_per_task = 2;
  std::size_t samples_per_class = 100;
  linalg::Index input_dim = 8;
  double class_separation = 6.0;
  double noise_std = 1.0;
  std::string source_dir;  // load an exported stream instead of generating

  // [partition]
  std::optional<double> alpha;  // empty = IID

  // [model]
  std::vector<linalg::Index> hidden_dims = {32};
  nn::Activation activation = nn::Activation::relu;
  std::size_t freeze_first_layers = 0;

  // [training]
  std::size_t clients = 1;
  double client_fraction = 1.0;
  std::size_t local_epochs = 1;
  std::size_t rounds_per_task = 1;
  double lr = 0.01;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  fedcl::AggregationWeights aggregation =
      fedcl::AggregationWeights::data_proportional;
  double vote_client_fraction = 1.0;
  bool cache_reference_activations = false;

  // [extraction]
  std::vector<double> epsilon = {0.7};  // broadcast when a single entry
  subspace::EnergyMode energy_mode = subspace::EnergyMode::sum_fraction;
  std::size_t sample_count = 256;
  std::size_t subsample_count = 128;
  std::size_t rsvd_rank = 0;  // 0 selects the exact path
  std::size_t rsvd_oversampling = 10;
  std::size_t rsvd_power_iterations = 2;

  // [run]
  std::uint64_t seed = 0;
  std::vector<Method> methods = {Method::fedavg, Method::fedprotip_no_tip,
                                 Method::fedprotip};
  std::vector<EvalMode> eval_modes = {EvalMode::task_aware,
                                      EvalMode::agnostic_no_tip,
                                      EvalMode::agnostic_tip};

  std::size_t projected_spaces() const { return hidden_dims.size() + 1; }

  void validate() const {
    if (hidden_dims.empty())
      throw ConfigError("[model] hidden_dims must not be empty");
    if (epsilon.size() != 1 && epsilon.size() != projected_spaces())
      throw ConfigError("[extraction] epsilon needs 1 or " +
                        std::to_string(projected_spaces()) + " entries, got " +
                        std::to_string(epsilon.size()));
    for (double e : epsilon)
      if (!(e > 0.0 && e <= 1.0))
        throw ConfigError("[extraction] epsilon entries must lie in (0, 1]");
    if (subsample_count > sample_count)
      throw ConfigError("[extraction] subsample_count exceeds sample_count");
    if (methods.empty()) throw ConfigError("[run] methods must not be empty");
    if (eval_modes.empty())
      throw ConfigError("[run] eval_modes must not be empty");
  }
};

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  using cfg_detail::SectionReader;
  const auto doc = cfg_detail::parse_document(text);
  const std::set<std::string> known = {"data", "partition", "model",
                                       "training", "extraction", "run"};
  for (const auto& [name, section] : doc)
    if (!known.count(name))
      throw ConfigError("unknown section [" + name + "]");

  ExperimentConfig cfg;

  SectionReader data(doc, "data");
  if (data.has("regime")) {
    const std::string regime = data.get_string("regime");
    if (regime == "class_incremental")
      cfg.regime = data::Regime::class_incremental;
    else if (regime == "domain_incremental")
      cfg.regime = data::Regime::domain_incremental;
    else
      throw ConfigError("[data] regime must be class_incremental or "
                        "domain_incremental");
  }
  if (data.has("num_tasks")) cfg.num_tasks = data.get_count("num_tasks");
  if (data.has("classes_per_task"))
    cfg.classes_per_task = data.get_count("classes_per_task");
  if (data.has("samples_per_class"))
    cfg.samples_per_class = data.get_count("samples_per_class");
  if (data.has("input_dim"))
    cfg.input_dim = static_cast<linalg::Index>(data.get_count("input_dim"));
  if (data.has("class_separation"))
    cfg.class_separation = data.get_double("class_separation");
  if (data.has("noise_std")) cfg.noise_std = data.get_double("noise_std");
  if (data.has("source_dir")) cfg.source_dir = data.get_string("source_dir");
  data.finish();

  SectionReader partition(doc, "partition");
  const bool has_alpha = partition.has("alpha");
  const bool has_iid = partition.has("iid");
  if (has_alpha && has_iid) {
    if (partition.get_bool("iid"))
      throw ConfigError("[partition] set either alpha or iid, not both");
    cfg.alpha = partition.get_double("alpha");
  } else if (has_alpha) {
    cfg.alpha = partition.get_double("alpha");
  } else if (has_iid) {
    if (!partition.get_bool("iid"))
      throw ConfigError("[partition] iid = false requires an alpha value");
    cfg.alpha.reset();
  }
  partition.finish();

  SectionReader model(doc, "model");
  if (model.has("hidden_dims")) {
    cfg.hidden_dims.clear();
    for (double d : model.get_number_array("hidden_dims")) {
      if (d < 1 || d != std::floor(d))
        throw ConfigError("[model] hidden_dims must be positive integers");
      cfg.hidden_dims.push_back(static_cast<linalg::Index>(d));
    }
  }
  if (model.has("activation")) {
    const std::string act = model.get_string("activation");
    if (act == "relu")
      cfg.activation = nn::Activation::relu;
    else if (act == "tanh")
      cfg.activation = nn::Activation::tanh;
    else
      throw ConfigError("[model] activation must be relu or tanh");
  }
  if (model.has("freeze_first_layers"))
    cfg.freeze_first_layers = model.get_count("freeze_first_layers");
  model.finish();

  SectionReader training(doc, "training");
  if (training.has("clients")) cfg.clients = training.get_count("clients");
  if (training.has("client_fraction"))
    cfg.client_fraction = training.get_double("client_fraction");
  if (training.has("local_epochs"))
    cfg.local_epochs = training.get_count("local_epochs");
  if (training.has("rounds_per_task"))
    cfg.rounds_per_task = training.get_count("rounds_per_task");
  if (training.has("lr")) cfg.lr = training.get_double("lr");
  if (training.has("weight_decay"))
    cfg.weight_decay = training.get_double("weight_decay");
  if (training.has("batch_size"))
    cfg.batch_size = training.get_count("batch_size");
  if (training.has("aggregation")) {
    const std::string agg = training.get_string("aggregation");
    if (agg == "data_proportional")
      cfg.aggregation = fedcl::AggregationWeights::data_proportional;
    else if (agg == "uniform")
      cfg.aggregation = fedcl::AggregationWeights::uniform;
    else
      throw ConfigError("[training] aggregation must be data_proportional or "
                        "uniform");
  }
  if (training.has("vote_client_fraction"))
    cfg.vote_client_fraction = training.get_double("vote_client_fraction");
  if (training.has("cache_reference_activations"))
    cfg.cache_reference_activations =
        training.get_bool("cache_reference_activations");
  training.finish();

  SectionReader extraction(doc, "extraction");
  if (extraction.has("epsilon"))
    cfg.epsilon = extraction.get_number_array("epsilon");
  if (extraction.has("energy_mode")) {
    const std::string mode = extraction.get_string("energy_mode");
    if (mode == "sum_fraction")
      cfg.energy_mode = subspace::EnergyMode::sum_fraction;
    else if (mode == "squared_sum_fraction")
      cfg.energy_mode = subspace::EnergyMode::squared_sum_fraction;
    else
      throw ConfigError("[extraction] energy_mode must be sum_fraction or "
                        "squared_sum_fraction");
  }
  if (extraction.has("sample_count"))
    cfg.sample_count = extraction.get_count("sample_count");
  if (extraction.has("subsample_count"))
    cfg.subsample_count = extraction.get_count("subsample_count");
  if (extraction.has("rsvd_rank"))
    cfg.rsvd_rank = extraction.get_count("rsvd_rank");
  if (extraction.has("rsvd_oversampling"))
    cfg.rsvd_oversampling = extraction.get_count("rsvd_oversampling");
  if (extraction.has("rsvd_power_iterations"))
    cfg.rsvd_power_iterations = extraction.get_count("rsvd_power_iterations");
  extraction.finish();

  SectionReader run(doc, "run");
  if (run.has("seed")) cfg.seed = run.get_u64("seed");
  if (run.has("methods")) {
    cfg.methods.clear();
    for (const auto& name : run.get_string_array("methods"))
      cfg.methods.push_back(parse_method(name));
  }
  if (run.has("eval_modes")) {
    cfg.eval_modes.clear();
    for (const auto& name : run.get_string_array("eval_modes"))
      cfg.eval_modes.push_back(parse_eval_mode(name));
  }
  run.finish();

  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_experiment_config(buf.str());
}

// Canonical echo: every field explicit, deterministic order, values printed
// so that parsing the echo reproduces the config exactly.
inline std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "[data]\n";
  os << "regime = \""
     << (cfg.regime == data::Regime::class_incremental ? "class_incremental"
                                                       : "domain_incremental")
     << "\"\n";
  os << "num_tasks = " << cfg.num_tasks << "\n";
  os << "classes_per_task = " << cfg.classes_per_task << "\n";
  os << "samples_per_class = " << cfg.samples_per_class << "\n";
  os << "input_dim = " << cfg.input_dim << "\n";
  os << "class_separation = " << csv::fmt(cfg.class_separation) << "\n";
  os << "noise_std = " << csv::fmt(cfg.noise_std) << "\n";
  os << "source_dir = \"" << cfg.source_dir << "\"\n";
  os << "\n[partition]\n";
  if (cfg.alpha)
    os << "alpha = " << csv::fmt(*cfg.alpha) << "\n";
  else
    os << "iid = true\n";
  os << "\n[model]\n";
  os << "hidden_dims = [";
  for (std::size_t i = 0; i < cfg.hidden_dims.size(); ++i)
    os << (i ? ", " : "") << cfg.hidden_dims[i];
  os << "]\n";
  os << "activation = \""
     << (cfg.activation == nn::Activation::relu ? "relu" : "tanh") << "\"\n";
  os << "freeze_first_layers = " << cfg.freeze_first_layers << "\n";
  os << "\n[training]\n";
  os << "clients = " << cfg.clients << "\n";
  os << "client_fraction = " << csv::fmt(cfg.client_fraction) << "\n";
  os << "local_epochs = " << cfg.local_epochs << "\n";
  os << "rounds_per_task = " << cfg.rounds_per_task << "\n";
  os << "lr = " << csv::fmt(cfg.lr) << "\n";
  os << "weight_decay = " << csv::fmt(cfg.weight_decay) << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "aggregation = \""
     << (cfg.aggregation == fedcl::AggregationWeights::data_proportional
             ? "data_proportional"
             : "uniform")
     << "\"\n";
  os << "vote_client_fraction = " << csv::fmt(cfg.vote_client_fraction) << "\n";
  os << "cache_reference_activations = "
     << (cfg.cache_reference_activations ? "true" : "false") << "\n";
  os << "\n[extraction]\n";
  os << "epsilon = [";
  for (std::size_t i = 0; i < cfg.epsilon.size(); ++i)
    os << (i ? ", " : "") << csv::fmt(cfg.epsilon[i]);
  os << "]\n";
  os << "energy_mode = \""
     << (cfg.energy_mode == subspace::EnergyMode::sum_fraction
             ? "sum_fraction"
             : "squared_sum_fraction")
     << "\"\n";
  os << "sample_count = " << cfg.sample_count << "\n";
  os << "subsample_count = " << cfg.subsample_count << "\n";
  os << "rsvd_rank = " << cfg.rsvd_rank << "\n";
  os << "rsvd_oversampling = " << cfg.rsvd_oversampling << "\n";
  os << "rsvd_power_iterations = " << cfg.rsvd_power_iterations << "\n";
  os << "\n[run]\n";
  os << "seed = " << cfg.seed << "\n";
  os << "methods = [";
  for (std::size_t i = 0; i < cfg.methods.size(); ++i)
    os << (i ? ", " : "") << "\"" << method_name(cfg.methods[i]) << "\"";
  os << "]\n";
  os << "eval_modes = [";
  for (std::size_t i = 0; i < cfg.eval_modes.size(); ++i)
    os << (i ? ", " : "") << "\"" << eval_mode_name(cfg.eval_modes[i]) << "\"";
  os << "]\n";
  return os.str();
}

inline void write_config_echo(const ExperimentConfig& cfg,
                              const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write config echo to " + path.string());
  os << render_config(cfg);
}

// --- builders -----------------------------------------------------------------

inline data::TaskStream make_stream(const ExperimentConfig& cfg) {
  if (!cfg.source_dir.empty()) return data::load_stream(cfg.source_dir);
  data::GeneratorConfig gen;
  gen.num_tasks = cfg.num_tasks;
  gen.classes_per_task = cfg.classes_per_task;
  gen.samples_per_class = cfg.samples_per_class;
  gen.input_dim = cfg.input_dim;
  gen.class_separation = cfg.class_separation;
  gen.noise_std = cfg.noise_std;
  gen.seed = rng::derive_key(cfg.seed, {0x64617461ULL});
  return cfg.regime == data::Regime::class_incremental
             ? data::generate_class_incremental(gen)
             : data::generate_domain_incremental(gen);
}

inline data::PartitionPlan make_plan(const ExperimentConfig& cfg,
                                     const data::TaskStream& stream) {
  return data::make_partition_plan(stream, cfg.clients, cfg.alpha,
                                   rng::derive_key(cfg.seed, {0x70617274ULL}));
}

inline nn::ModelSpec make_model_spec(const ExperimentConfig& cfg,
                                     const data::TaskStream& stream) {
  nn::ModelSpec spec;
  spec.layer_dims.push_back(stream.tasks.empty()
                                ? cfg.input_dim
                                : stream.tasks.front().inputs.rows());
  for (linalg::Index d : cfg.hidden_dims) spec.layer_dims.push_back(d);
  spec.activation = cfg.activation;
  for (const auto& task : stream.tasks) {
    std::set<linalg::Index> labels(task.labels.begin(), task.labels.end());
    spec.head_classes_per_task.push_back(
        static_cast<linalg::Index>(labels.size()));
  }
  if (stream.regime == data::Regime::domain_incremental)
    spec.head_classes_per_task.resize(1);
  return spec;
}

inline fedcl::TrainingConfig make_training_config(const ExperimentConfig& cfg,
                                                  Method method) {
  fedcl::TrainingConfig t;
  t.num_clients = cfg.clients;
  t.client_fraction = cfg.client_fraction;
  t.local_epochs = cfg.local_epochs;
  t.global_rounds_per_task = cfg.rounds_per_task;
  t.lr = cfg.lr;
  t.weight_decay = cfg.weight_decay;
  t.batch_size = cfg.batch_size;
  t.extraction.energy_mode = cfg.energy_mode;
  t.extraction.sample_count_m = cfg.sample_count;
  t.extraction.subsample_count_ms = cfg.subsample_count;
  t.extraction.epsilon_per_layer =
      cfg.epsilon.size() == 1
          ? std::vector<double>(cfg.projected_spaces(), cfg.epsilon.front())
          : cfg.epsilon;
  t.svd.target_rank = static_cast<linalg::Index>(cfg.rsvd_rank);
  t.svd.oversampling = static_cast<linalg::Index>(cfg.rsvd_oversampling);
  t.svd.power_iterations =
      static_cast<linalg::Index>(cfg.rsvd_power_iterations);
  t.projection_enabled = method != Method::fedavg;
  t.tip_enabled = method == Method::fedprotip;
  t.aggregation_weights_mode = cfg.aggregation;
  t.vote_client_fraction = cfg.vote_client_fraction;
  t.cache_reference_activations = cfg.cache_reference_activations;
  t.freeze_first_n_layers = cfg.freeze_first_layers;
  t.seed = rng::derive_key(cfg.seed, {0x747261696eULL});
  return t;
}

}  // namespace fedprotip::harness
