#include "harness/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "harness/report.hpp"

namespace advt::harness {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t to_int(const std::string& v, const std::string& path) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (...) {
    throw ConfigError(path + ": expected an integer, got '" + v + "'");
  }
}

uint64_t to_u64(const std::string& v, const std::string& path) {
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (...) {
    throw ConfigError(path + ": expected an unsigned integer, got '" + v + "'");
  }
}

double to_double(const std::string& v, const std::string& path) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (...) {
    throw ConfigError(path + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& v, const std::string& path) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError(path + ": expected true/false, got '" + v + "'");
}

// Pulls known keys out of a section, erroring on anything left over.
class Section {
 public:
  Section(std::string name, std::map<std::string, std::string> kv)
      : name_(std::move(name)), kv_(std::move(kv)) {}

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string str(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }
  int64_t integer(const std::string& key, int64_t fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : to_int(it->second, path(key));
  }
  uint64_t u64(const std::string& key, uint64_t fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : to_u64(it->second, path(key));
  }
  double number(const std::string& key, double fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : to_double(it->second, path(key));
  }
  bool boolean(const std::string& key, bool fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : to_bool(it->second, path(key));
  }
  std::string path(const std::string& key) const { return name_ + "." + key; }

  void finish() const {
    for (const auto& [k, _] : kv_)
      if (!used_.count(k)) throw ConfigError("unknown key " + name_ + "." + k);
  }

 private:
  std::string name_;
  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

nn::SGDConfig sgd_from(Section& s, const nn::SGDConfig& defaults) {
  nn::SGDConfig cfg = defaults;
  cfg.epochs = static_cast<int>(s.integer("epochs", cfg.epochs));
  cfg.batch_size = static_cast<int>(s.integer("batch_size", cfg.batch_size));
  cfg.learning_rate = s.number("learning_rate", cfg.learning_rate);
  cfg.momentum = s.number("momentum", cfg.momentum);
  return cfg;
}

}  // namespace

RawConfig RawConfig::parse_text(const std::string& text, const std::string& origin) {
  RawConfig raw;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::map<std::string, std::string>* bucket = nullptr;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string where = origin + ":" + std::to_string(lineno);
    size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      if (section.rfind("attack:", 0) == 0) {
        std::string name = trim(section.substr(7));
        if (name.empty()) throw ConfigError(where + ": attack section needs a name");
        for (const auto& [n, _] : raw.attack_sections)
          if (n == name) throw ConfigError(where + ": duplicate attack section '" + name + "'");
        raw.attack_sections.emplace_back(name, std::map<std::string, std::string>{});
        bucket = &raw.attack_sections.back().second;
      } else {
        bucket = &raw.sections[section];
      }
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    if (!bucket) throw ConfigError(where + ": key outside any [section]");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (bucket->count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    (*bucket)[key] = value;
  }
  return raw;
}

RawConfig RawConfig::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path);
}

nn::ModelSpec make_arch(const std::string& name, nn::InputShape input, int classes) {
  using nn::Layer;
  nn::ModelSpec spec;
  spec.input = input;
  spec.class_count = classes;
  auto flat_after = [&](const std::vector<Layer>& layers) {
    nn::ModelSpec probe;
    probe.input = input;
    probe.layers = layers;
    auto trace = probe.shape_trace();
    int64_t flat = 1;
    for (int64_t d : trace.back()) flat *= d;
    return flat;
  };
  if (name == "conv-small") {
    spec.layers = {Layer::conv(input.channels, 8, 3, 2, 1), Layer::relu(),
                   Layer::conv(8, 16, 3, 2, 1), Layer::relu(), Layer::flatten()};
    spec.layers.push_back(Layer::dense(flat_after(spec.layers), classes));
  } else if (name == "conv-tiny") {
    spec.layers = {Layer::conv(input.channels, 6, 3, 2, 1), Layer::relu(), Layer::flatten()};
    spec.layers.push_back(Layer::dense(flat_after(spec.layers), classes));
  } else if (name == "mlp-64") {
    spec.layers = {Layer::flatten(), Layer::dense(input.flat(), 64), Layer::relu(),
                   Layer::dense(64, classes)};
  } else if (name == "mlp-32") {
    spec.layers = {Layer::flatten(), Layer::dense(input.flat(), 32), Layer::relu(),
                   Layer::dense(32, classes)};
  } else if (name == "linear") {
    spec.layers = {Layer::flatten(), Layer::dense(input.flat(), classes)};
  } else if (name == "fcn-small") {
    // image -> image surrogate
    spec.class_count = 0;
    spec.layers = {Layer::conv(input.channels, 8, 3, 1, 1), Layer::relu(),
                   Layer::conv(8, static_cast<int>(input.channels), 3, 1, 1)};
  } else {
    throw ConfigError("unknown architecture '" + name + "'");
  }
  spec.validate();
  return spec;
}

ExperimentConfig ExperimentConfig::from_raw(const RawConfig& raw) {
  static const std::set<std::string> known = {"experiment", "data", "fa",
                                              "train",      "fb",   "defense"};
  for (const auto& [name, _] : raw.sections)
    if (!known.count(name)) throw ConfigError("unknown section [" + name + "]");

  auto section = [&](const std::string& name) {
    auto it = raw.sections.find(name);
    return Section(name, it == raw.sections.end() ? std::map<std::string, std::string>{}
                                                  : it->second);
  };

  ExperimentConfig cfg;

  Section exp = section("experiment");
  cfg.seed = exp.u64("seed", cfg.seed);
  cfg.out_dir = exp.str("out_dir", cfg.out_dir);
  cfg.threads = static_cast<int>(exp.integer("threads", cfg.threads));
  cfg.time_adversarial_baseline =
      exp.boolean("time_adversarial_baseline", cfg.time_adversarial_baseline);
  exp.finish();

  Section data = section("data");
  cfg.data.source = data.str("source", cfg.data.source);
  if (cfg.data.source != "synthetic" && cfg.data.source != "idx")
    throw ConfigError("data.source must be 'synthetic' or 'idx'");
  cfg.data.kind = data.str("kind", cfg.data.kind);
  cfg.data.train_count = static_cast<int>(data.integer("train_count", cfg.data.train_count));
  cfg.data.test_count = static_cast<int>(data.integer("test_count", cfg.data.test_count));
  cfg.data.classes = static_cast<int>(data.integer("classes", cfg.data.classes));
  cfg.data.image_side = static_cast<int>(data.integer("image_side", cfg.data.image_side));
  cfg.data.train_images = data.str("train_images", "");
  cfg.data.train_labels = data.str("train_labels", "");
  cfg.data.test_images = data.str("test_images", "");
  cfg.data.test_labels = data.str("test_labels", "");
  cfg.data.limit_train = static_cast<int>(data.integer("limit_train", 0));
  cfg.data.limit_test = static_cast<int>(data.integer("limit_test", 0));
  cfg.data.eval_count = static_cast<int>(data.integer("eval_count", cfg.data.eval_count));
  if (cfg.data.source == "idx" &&
      (cfg.data.train_images.empty() || cfg.data.train_labels.empty() ||
       cfg.data.test_images.empty() || cfg.data.test_labels.empty()))
    throw ConfigError("data: idx source needs train/test images and labels paths");
  data.finish();

  Section fa = section("fa");
  cfg.fa_arch = fa.str("arch", cfg.fa_arch);
  fa.finish();

  Section train = section("train");
  cfg.train = sgd_from(train, cfg.train);
  train.finish();

  Section fb = section("fb");
  cfg.fb.arch = fb.str("arch", cfg.fb.arch);
  std::string mode = fb.str("pretrain", "standard");
  if (mode == "standard")
    cfg.fb.pretrain = PretrainMode::Standard;
  else if (mode == "adversarial")
    cfg.fb.pretrain = PretrainMode::Adversarial;
  else if (mode == "untrained")
    cfg.fb.pretrain = PretrainMode::Untrained;
  else
    throw ConfigError("fb.pretrain must be standard|adversarial|untrained, got '" + mode + "'");
  cfg.fb.sgd = sgd_from(fb, cfg.fb.sgd);
  cfg.fb.adv.epsilon = fb.number("adv_epsilon", cfg.fb.adv.epsilon);
  cfg.fb.adv.steps = static_cast<int>(fb.integer("adv_steps", cfg.fb.adv.steps));
  cfg.fb.adv.stepsize = fb.number("adv_stepsize", cfg.fb.adv.stepsize);
  fb.finish();

  Section defense = section("defense");
  cfg.transform.delta = defense.number("delta", cfg.transform.delta);
  cfg.transform.steps = static_cast<int>(defense.integer("steps", cfg.transform.steps));
  cfg.transform.stepsize = defense.number("stepsize", cfg.transform.delta / 6.0);
  cfg.transform.random_start = defense.boolean("random_start", cfg.transform.random_start);
  cfg.transform.rng_seed = defense.u64("rng_seed", rng_derive(cfg.seed, 0xDEF));
  cfg.eval_resample = defense.boolean("eval_resample", cfg.eval_resample);
  defense.finish();

  uint64_t attack_index = 0;
  for (const auto& [name, kv] : raw.attack_sections) {
    Section s("attack:" + name, kv);
    attacks::AttackSpec spec;
    spec.name = name;
    spec.kind = attacks::attack_kind_from_string(s.str("kind", "bpda"));
    spec.cfg.epsilon = s.number("epsilon", 0.3);
    spec.cfg.steps = static_cast<int>(s.integer("steps", 50));
    // same schedule the paper pairs with eps=0.031, rescaled to the budget
    spec.cfg.stepsize = s.number("stepsize", 0.002 * (spec.cfg.epsilon / 0.031));
    spec.cfg.eot_samples = static_cast<int>(s.integer("eot_samples", 8));
    spec.cfg.surrogate = surrogate_from_string(s.str("surrogate", "soft-sign"));
    spec.cfg.rng_seed = s.u64("seed", rng_derive(cfg.seed, 0xA770 + attack_index));
    spec.population = static_cast<int>(s.integer("population", spec.population));
    spec.generations = static_cast<int>(s.integer("generations", spec.generations));
    spec.smalln_steps = static_cast<int>(s.integer("smalln_steps", spec.smalln_steps));
    if (spec.kind == attacks::AttackKind::Reparam) {
      nn::InputShape in = {1, int64_t(cfg.data.image_side), int64_t(cfg.data.image_side)};
      spec.reparam_spec = make_arch(s.str("reparam_arch", "fcn-small"), in, 0);
      spec.reparam_train.epochs = static_cast<int>(s.integer("reparam_epochs", 3));
      spec.reparam_train.batch_size = static_cast<int>(s.integer("reparam_batch_size", 32));
      spec.reparam_train.learning_rate = s.number("reparam_learning_rate", 0.02);
      spec.reparam_train.momentum = s.number("reparam_momentum", 0.9);
      spec.reparam_train_count =
          static_cast<int>(s.integer("reparam_train_count", spec.reparam_train_count));
    }
    s.finish();
    cfg.suite.push_back(std::move(spec));
    ++attack_index;
  }

  cfg.transform.validate();
  cfg.train.validate();
  cfg.fb.sgd.validate();
  for (const auto& a : cfg.suite) a.cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return from_raw(RawConfig::parse_file(path));
}

std::map<std::string, std::string> ExperimentConfig::echo() const {
  std::map<std::string, std::string> m;
  auto num = [](double v) { return format_g6(v); };
  m["experiment.seed"] = std::to_string(seed);
  m["experiment.threads"] = std::to_string(threads);
  m["experiment.time_adversarial_baseline"] = time_adversarial_baseline ? "true" : "false";
  m["data.source"] = data.source;
  if (data.source == "synthetic") {
    m["data.kind"] = data.kind;
    m["data.train_count"] = std::to_string(data.train_count);
    m["data.test_count"] = std::to_string(data.test_count);
    m["data.classes"] = std::to_string(data.classes);
    m["data.image_side"] = std::to_string(data.image_side);
  } else {
    m["data.train_images"] = data.train_images;
    m["data.train_labels"] = data.train_labels;
    m["data.test_images"] = data.test_images;
    m["data.test_labels"] = data.test_labels;
    m["data.limit_train"] = std::to_string(data.limit_train);
    m["data.limit_test"] = std::to_string(data.limit_test);
  }
  m["data.eval_count"] = std::to_string(data.eval_count);
  m["fa.arch"] = fa_arch;
  m["train.epochs"] = std::to_string(train.epochs);
  m["train.batch_size"] = std::to_string(train.batch_size);
  m["train.learning_rate"] = num(train.learning_rate);
  m["train.momentum"] = num(train.momentum);
  m["fb.arch"] = fb.arch;
  m["fb.pretrain"] = fb.pretrain == PretrainMode::Standard     ? "standard"
                     : fb.pretrain == PretrainMode::Adversarial ? "adversarial"
                                                                : "untrained";
  m["fb.epochs"] = std::to_string(fb.sgd.epochs);
  m["fb.batch_size"] = std::to_string(fb.sgd.batch_size);
  m["fb.learning_rate"] = num(fb.sgd.learning_rate);
  m["fb.momentum"] = num(fb.sgd.momentum);
  if (fb.pretrain == PretrainMode::Adversarial) {
    m["fb.adv_epsilon"] = num(fb.adv.epsilon);
    m["fb.adv_steps"] = std::to_string(fb.adv.steps);
    m["fb.adv_stepsize"] = num(fb.adv.stepsize);
  }
  m["defense.delta"] = num(transform.delta);
  m["defense.steps"] = std::to_string(transform.steps);
  m["defense.stepsize"] = num(transform.stepsize);
  m["defense.random_start"] = transform.random_start ? "true" : "false";
  m["defense.rng_seed"] = std::to_string(transform.rng_seed);
  m["defense.eval_resample"] = eval_resample ? "true" : "false";
  for (const auto& a : suite) {
    std::string p = "attack:" + a.name + ".";
    m[p + "kind"] = attacks::to_string(a.kind);
    m[p + "epsilon"] = num(a.cfg.epsilon);
    m[p + "steps"] = std::to_string(a.cfg.steps);
    m[p + "stepsize"] = num(a.cfg.stepsize);
    m[p + "eot_samples"] = std::to_string(a.cfg.eot_samples);
    m[p + "surrogate"] = to_string(a.cfg.surrogate);
    m[p + "seed"] = std::to_string(a.cfg.rng_seed);
    if (a.kind == attacks::AttackKind::QueryGenetic) {
      m[p + "population"] = std::to_string(a.population);
      m[p + "generations"] = std::to_string(a.generations);
    }
    if (a.kind == attacks::AttackKind::TransferSmallN)
      m[p + "smalln_steps"] = std::to_string(a.smalln_steps);
    if (a.kind == attacks::AttackKind::Reparam) {
      m[p + "reparam_epochs"] = std::to_string(a.reparam_train.epochs);
      m[p + "reparam_train_count"] = std::to_string(a.reparam_train_count);
    }
  }
  return m;
}

}  // namespace advt::harness
