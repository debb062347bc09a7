#include "harness/experiment.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "core/error.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"
#include "core/sha256.hpp"
#include "nn/checkpoint.hpp"

namespace advt::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string config_digest(const ExperimentConfig& cfg) {
  std::string flat;
  for (const auto& [k, v] : cfg.echo()) flat += k + "=" + v + "\n";
  return sha256_hex(flat);
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

}  // namespace

struct Experiment::State {
  data::Dataset train, test, eval;
  std::string data_digest;

  std::optional<nn::Model> fb;
  std::optional<defense::DefensePipeline> pipeline;
  std::optional<nn::Model> blackbox_source;
  std::map<int, defense::DefensePipeline> smalln_sources;
  std::optional<attacks::SuiteReport> suite_report;

  std::map<std::string, double> phase_seconds;
};

Experiment::Experiment(ExperimentConfig cfg, std::string cache_dir)
    : cfg_(std::move(cfg)),
      cache_dir_(cache_dir.empty() ? (fs::path(cfg_.out_dir) / "cache").string()
                                   : std::move(cache_dir)),
      state_(std::make_shared<State>()) {
  set_thread_count(cfg_.threads);
  fs::create_directories(cfg_.out_dir);
  fs::create_directories(cache_dir_);
}

template <typename Fn>
void Experiment::phase(const std::string& name, Fn&& fn) {
  auto t0 = std::chrono::steady_clock::now();
  try {
    fn();
  } catch (...) {
    // leave a partial report naming the failing phase, then let the error out
    try {
      EvalReport partial;
      partial.status = "partial";
      partial.failed_phase = name;
      partial.config_echo = cfg_.echo();
      partial.eval_policy =
          attacks::EvalPolicy{0, cfg_.eval_resample}.name();
      write_report(partial, cfg_.out_dir);
    } catch (...) {
    }
    throw;
  }
  state_->phase_seconds[name + "_seconds"] += seconds_since(t0);
}

void Experiment::ensure_data() {
  State& st = *state_;
  if (st.train.size() > 0) return;
  const DataConfig& d = cfg_.data;
  if (d.source == "synthetic") {
    data::SyntheticKind kind = data::synthetic_kind_from_string(d.kind);
    st.train = data::generate_synthetic(kind, d.train_count, d.classes, d.image_side,
                                        rng_derive(cfg_.seed, 0xDA7A));
    st.test = data::generate_synthetic(kind, d.test_count, d.classes, d.image_side,
                                       rng_derive(cfg_.seed, 0xDA7B));
  } else {
    st.train = data::load_idx(d.train_images, d.train_labels);
    st.test = data::load_idx(d.test_images, d.test_labels);
    if (d.limit_train > 0) st.train = data::take(st.train, d.limit_train);
    if (d.limit_test > 0) st.test = data::take(st.test, d.limit_test);
  }
  st.eval = d.eval_count > 0 ? data::take(st.test, d.eval_count) : st.test;
  st.data_digest = sha256_hex(data::dataset_digest(st.train) + data::dataset_digest(st.test));
}

namespace {

// Cache entry: checkpoint plus a sidecar with the original training seconds.
struct Cached {
  nn::Model model;
  double seconds = 0.0;
};

Cached train_cached(const std::string& cache_dir, const std::string& key,
                    const std::function<nn::Model()>& build) {
  fs::path ckpt = fs::path(cache_dir) / (key + ".ckpt");
  fs::path sidecar = fs::path(cache_dir) / (key + ".seconds");
  if (fs::exists(ckpt)) {
    Cached c{nn::load_checkpoint(ckpt.string()), 0.0};
    std::ifstream in(sidecar);
    if (in) in >> c.seconds;
    return c;
  }
  auto t0 = std::chrono::steady_clock::now();
  Cached c{build(), 0.0};
  c.seconds = seconds_since(t0);
  nn::save_checkpoint(c.model, ckpt.string());
  std::ofstream out(sidecar);
  out.precision(9);
  out << c.seconds << "\n";
  return c;
}

}  // namespace

void Experiment::ensure_fb() {
  State& st = *state_;
  if (st.fb) return;
  ensure_data();

  nn::InputShape in{st.train.images.dim(1), st.train.images.dim(2), st.train.images.dim(3)};
  nn::ModelSpec spec = make_arch(cfg_.fb.arch, in, st.train.class_count);
  const char* mode = cfg_.fb.pretrain == PretrainMode::Standard     ? "standard"
                     : cfg_.fb.pretrain == PretrainMode::Adversarial ? "adversarial"
                                                                     : "untrained";
  std::ostringstream keysrc;
  keysrc << "fb|" << spec.to_json() << "|" << cfg_.seed << "|" << mode << "|"
         << cfg_.fb.sgd.epochs << "," << cfg_.fb.sgd.batch_size << ","
         << cfg_.fb.sgd.learning_rate << "," << cfg_.fb.sgd.momentum << "|"
         << cfg_.fb.adv.epsilon << "," << cfg_.fb.adv.steps << "," << cfg_.fb.adv.stepsize
         << "|" << st.data_digest;
  Cached c = train_cached(cache_dir_, sha256_hex(keysrc.str()), [&]() {
    nn::Model m = nn::init_params(spec, rng_derive(cfg_.seed, 0xFB));
    if (cfg_.fb.pretrain == PretrainMode::Standard)
      nn::train_standard(m, st.train, cfg_.fb.sgd, rng_derive(cfg_.seed, 0xFB7));
    else if (cfg_.fb.pretrain == PretrainMode::Adversarial)
      nn::adversarial_train(m, st.train, cfg_.fb.sgd, cfg_.fb.adv,
                            rng_derive(cfg_.seed, 0xFB7));
    return m;
  });
  st.phase_seconds["pretrain_fb_train_seconds"] = c.seconds;
  st.fb = std::move(c.model);
  nn::save_checkpoint(*st.fb, (fs::path(cfg_.out_dir) / "fb.ckpt").string());
}

void Experiment::ensure_fa() {
  State& st = *state_;
  if (st.pipeline) return;
  ensure_fb();

  nn::InputShape in{st.train.images.dim(1), st.train.images.dim(2), st.train.images.dim(3)};
  nn::ModelSpec spec = make_arch(cfg_.fa_arch, in, st.train.class_count);
  std::string fb_digest = nn::model_digest(*st.fb);

  std::ostringstream keysrc;
  keysrc << "fa|" << spec.to_json() << "|" << cfg_.seed << "|" << cfg_.train.epochs << ","
         << cfg_.train.batch_size << "," << cfg_.train.learning_rate << ","
         << cfg_.train.momentum << "|" << cfg_.transform.delta << "," << cfg_.transform.steps
         << "," << cfg_.transform.stepsize << "," << cfg_.transform.random_start << ","
         << cfg_.transform.rng_seed << "|" << fb_digest << "|" << st.data_digest;
  Cached c = train_cached(cache_dir_, sha256_hex(keysrc.str()), [&]() {
    defense::DefensePipeline p{nn::init_params(spec, rng_derive(cfg_.seed, 0xFA)), *st.fb,
                               cfg_.transform};
    defense::train_defense(p, st.train, cfg_.train, rng_derive(cfg_.seed, 0xFA7));
    return p.fa;
  });
  st.phase_seconds["train_defense_seconds"] = c.seconds;
  st.pipeline = defense::DefensePipeline{std::move(c.model), *st.fb, cfg_.transform};
  nn::save_checkpoint(st.pipeline->fa, (fs::path(cfg_.out_dir) / "fa.ckpt").string());

  if (cfg_.time_adversarial_baseline) {
    std::ostringstream basekey;
    basekey << "fa-advtrain|" << spec.to_json() << "|" << cfg_.seed << "|" << cfg_.train.epochs
            << "," << cfg_.train.batch_size << "," << cfg_.train.learning_rate << ","
            << cfg_.train.momentum << "|" << cfg_.fa_adv_baseline.epsilon << ","
            << cfg_.fa_adv_baseline.steps << "," << cfg_.fa_adv_baseline.stepsize << "|"
            << st.data_digest;
    Cached adv = train_cached(cache_dir_, sha256_hex(basekey.str()), [&]() {
      nn::Model m = nn::init_params(spec, rng_derive(cfg_.seed, 0xFA));
      nn::adversarial_train(m, st.train, cfg_.train, cfg_.fa_adv_baseline,
                            rng_derive(cfg_.seed, 0xFA7));
      return m;
    });
    st.phase_seconds["adversarial_train_seconds"] = adv.seconds;

    std::ostringstream stdkey;
    stdkey << "fa-stdtrain|" << spec.to_json() << "|" << cfg_.seed << "|" << cfg_.train.epochs
           << "," << cfg_.train.batch_size << "," << cfg_.train.learning_rate << ","
           << cfg_.train.momentum << "|" << st.data_digest;
    Cached std_train = train_cached(cache_dir_, sha256_hex(stdkey.str()), [&]() {
      nn::Model m = nn::init_params(spec, rng_derive(cfg_.seed, 0xFA));
      nn::train_standard(m, st.train, cfg_.train, rng_derive(cfg_.seed, 0xFA7));
      return m;
    });
    st.phase_seconds["standard_train_seconds"] = std_train.seconds;
  }
}

void Experiment::ensure_attacks() {
  State& st = *state_;
  if (st.suite_report) return;
  ensure_fa();

  // Reuse stored attack results only for the identical configuration.
  fs::path attacks_path = fs::path(cfg_.out_dir) / "attacks.json";
  std::string digest = config_digest(cfg_);
  if (fs::exists(attacks_path)) {
    std::ifstream in(attacks_path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      json j = json::parse(ss.str());
      if (j.at("config_digest").get<std::string>() == digest) {
        attacks::SuiteReport r;
        r.standard_accuracy = j.at("standard_accuracy").get<double>();
        for (const auto& e : j.at("attacks"))
          r.per_attack.emplace_back(e.at("name").get<std::string>(),
                                    e.at("accuracy").get<double>());
        r.worst_case = j.at("worst_case").get<double>();
        r.best_attack = j.at("best_attack").get<std::string>();
        r.has_bpda = j.at("has_bpda").get<bool>();
        if (r.has_bpda) {
          r.worst_case_bpda = j.at("worst_case_bpda").get<double>();
          r.best_bpda_attack = j.at("best_bpda_attack").get<std::string>();
        }
        st.suite_report = std::move(r);
        return;
      }
    } catch (const std::exception&) {
      // unreadable cache: recompute
    }
  }

  attacks::SuiteContext ctx;
  ctx.eval.seed = rng_derive(cfg_.seed, 0xE7A);
  ctx.eval.resample_per_call = cfg_.eval_resample;
  ctx.reparam_train_split = &st.train;
  ctx.reparam_val_split = &st.eval;

  bool needs_blackbox = false;
  std::set<int> smalln_wanted;
  for (const auto& a : cfg_.suite) {
    if (a.kind == attacks::AttackKind::TransferBlackbox) needs_blackbox = true;
    if (a.kind == attacks::AttackKind::TransferSmallN) smalln_wanted.insert(a.smalln_steps);
  }

  if (needs_blackbox) {
    nn::InputShape in{st.train.images.dim(1), st.train.images.dim(2), st.train.images.dim(3)};
    nn::ModelSpec spec = make_arch(cfg_.fa_arch, in, st.train.class_count);
    std::ostringstream keysrc;
    keysrc << "blackbox|" << spec.to_json() << "|" << cfg_.seed << "|" << cfg_.train.epochs
           << "," << cfg_.train.batch_size << "," << cfg_.train.learning_rate << ","
           << cfg_.train.momentum << "|" << st.data_digest;
    Cached c = train_cached(cache_dir_, sha256_hex(keysrc.str()), [&]() {
      nn::Model m = nn::init_params(spec, rng_derive(cfg_.seed, 0xB0B));
      nn::train_standard(m, st.train, cfg_.train, rng_derive(cfg_.seed, 0xB0B7));
      return m;
    });
    st.blackbox_source = std::move(c.model);
    ctx.blackbox_source = &*st.blackbox_source;
  }

  for (int steps : smalln_wanted) {
    nn::InputShape in{st.train.images.dim(1), st.train.images.dim(2), st.train.images.dim(3)};
    nn::ModelSpec spec = make_arch(cfg_.fa_arch, in, st.train.class_count);
    defense::TransformConfig tiny = cfg_.transform;
    tiny.steps = steps;
    std::string fb_digest = nn::model_digest(*st.fb);
    std::ostringstream keysrc;
    keysrc << "smalln|" << steps << "|" << spec.to_json() << "|" << cfg_.seed << "|"
           << cfg_.train.epochs << "," << cfg_.train.batch_size << ","
           << cfg_.train.learning_rate << "," << cfg_.train.momentum << "|"
           << tiny.delta << "," << tiny.stepsize << "," << tiny.random_start << ","
           << tiny.rng_seed << "|" << fb_digest << "|" << st.data_digest;
    Cached c = train_cached(cache_dir_, sha256_hex(keysrc.str()), [&]() {
      defense::DefensePipeline p{nn::init_params(spec, rng_derive(cfg_.seed, 0x5A11)), *st.fb,
                                 tiny};
      defense::train_defense(p, st.train, cfg_.train, rng_derive(cfg_.seed, 0x5A17));
      return p.fa;
    });
    st.smalln_sources.emplace(steps,
                              defense::DefensePipeline{std::move(c.model), *st.fb, tiny});
  }
  for (const auto& [steps, p] : st.smalln_sources) ctx.smalln_sources[steps] = &p;

  st.suite_report = attacks::worst_case_eval(*st.pipeline, st.eval, cfg_.suite, ctx);

  json j;
  j["config_digest"] = digest;
  j["standard_accuracy"] = st.suite_report->standard_accuracy;
  j["attacks"] = json::array();
  for (const auto& [n, a] : st.suite_report->per_attack)
    j["attacks"].push_back({{"name", n}, {"accuracy", a}});
  j["worst_case"] = st.suite_report->worst_case;
  j["best_attack"] = st.suite_report->best_attack;
  j["has_bpda"] = st.suite_report->has_bpda;
  if (st.suite_report->has_bpda) {
    j["worst_case_bpda"] = st.suite_report->worst_case_bpda;
    j["best_bpda_attack"] = st.suite_report->best_bpda_attack;
  }
  std::ofstream out(attacks_path, std::ios::binary | std::ios::trunc);
  out << j.dump(2) << "\n";
}

EvalReport Experiment::assemble_report() const {
  const State& st = *state_;
  const attacks::SuiteReport& s = *st.suite_report;
  EvalReport r;
  r.standard_accuracy = s.standard_accuracy;
  r.attacks = s.per_attack;
  r.worst_case = s.worst_case;
  r.best_attack = s.best_attack;
  r.has_bpda = s.has_bpda;
  r.worst_case_bpda = s.worst_case_bpda;
  r.best_bpda_attack = s.best_bpda_attack;
  r.config_echo = cfg_.echo();
  r.artifacts["data"] = st.data_digest;
  r.artifacts["fb_checkpoint"] = nn::model_digest(*st.fb);
  r.artifacts["fa_checkpoint"] = nn::model_digest(st.pipeline->fa);
  r.eval_policy = attacks::EvalPolicy{0, cfg_.eval_resample}.name();
  r.phase_seconds = st.phase_seconds;
  return r;
}

void Experiment::pretrain_fb() {
  phase("pretrain_fb", [&] { ensure_fb(); });
}

void Experiment::train_defense() {
  phase("pretrain_fb", [&] { ensure_fb(); });
  phase("train_defense", [&] { ensure_fa(); });
}

void Experiment::run_attacks() {
  phase("pretrain_fb", [&] { ensure_fb(); });
  phase("train_defense", [&] { ensure_fa(); });
  phase("attack", [&] { ensure_attacks(); });
}

EvalReport Experiment::evaluate() {
  run_attacks();
  EvalReport r;
  phase("evaluate", [&] {
    r = assemble_report();
    r.phase_seconds = state_->phase_seconds;
    write_report(r, cfg_.out_dir);
  });
  return r;
}

EvalReport Experiment::write_report_only() {
  EvalReport r;
  phase("evaluate", [&] {
    ensure_data();
    fs::path fb_path = fs::path(cfg_.out_dir) / "fb.ckpt";
    fs::path fa_path = fs::path(cfg_.out_dir) / "fa.ckpt";
    if (!fs::exists(fb_path) || !fs::exists(fa_path))
      throw Error("report: missing checkpoints under " + cfg_.out_dir +
                  "; run train-defense first");
    state_->fb = nn::load_checkpoint(fb_path.string());
    state_->pipeline =
        defense::DefensePipeline{nn::load_checkpoint(fa_path.string()), *state_->fb,
                                 cfg_.transform};
    fs::path attacks_path = fs::path(cfg_.out_dir) / "attacks.json";
    if (!fs::exists(attacks_path))
      throw Error("report: missing attacks.json under " + cfg_.out_dir + "; run attack first");
    ensure_attacks();
    r = assemble_report();
    write_report(r, cfg_.out_dir);
  });
  return r;
}

void Experiment::sweep(const std::string& parameter, const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("sweep: no values given");
  bool is_steps = parameter == "defense.N" || parameter == "defense.steps";
  bool is_delta = parameter == "defense.delta";
  bool is_eot = parameter == "attack.eot_samples";
  if (!is_steps && !is_delta && !is_eot)
    throw ConfigError("sweep: unknown parameter '" + parameter +
                      "' (defense.N | defense.delta | attack.eot_samples)");

  std::vector<EvalReport> reports;
  for (const std::string& v : values) {
    ExperimentConfig sub = cfg_;
    try {
      if (is_steps) {
        sub.transform.steps = static_cast<int>(std::stoll(v));
      } else if (is_delta) {
        sub.transform.delta = std::stod(v);
        sub.transform.stepsize = sub.transform.delta / 6.0;
      } else {
        for (auto& a : sub.suite) a.cfg.eot_samples = static_cast<int>(std::stoll(v));
      }
    } catch (const std::exception&) {
      throw ConfigError("sweep: bad value '" + v + "' for " + parameter);
    }
    sub.out_dir =
        (fs::path(cfg_.out_dir) / ("sweep-" + sanitize(parameter)) / sanitize(v)).string();
    Experiment e(std::move(sub), cache_dir_);
    reports.push_back(e.evaluate());
  }

  fs::path curve_dir = fs::path(cfg_.out_dir) / "curves";
  fs::create_directories(curve_dir);
  fs::path csv_path = curve_dir / (sanitize(parameter) + ".csv");
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << parameter << ",standard_accuracy";
  for (const auto& a : cfg_.suite) csv << "," << a.name;
  csv << "\n";
  for (size_t i = 0; i < values.size(); ++i) {
    csv << values[i] << "," << format_g6(reports[i].standard_accuracy);
    for (const auto& [_, acc] : reports[i].attacks) csv << "," << format_g6(acc);
    csv << "\n";
  }
}

EvalReport run_experiment(const std::string& config_path) {
  Experiment e(ExperimentConfig::load(config_path));
  return e.evaluate();
}

}  // namespace advt::harness
