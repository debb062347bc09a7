#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "harness/config.hpp"
#include "harness/report.hpp"

namespace advt::harness {

// Drives the phases pretrain-fb -> train-defense -> attack-suite -> report
// against an output directory. Trained models are cached under
// <cache_dir> keyed by a digest of (spec, seed, data digest, trainer
// config), so reruns and sweeps reuse whatever the swept parameter does not
// influence.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg, std::string cache_dir = "");

  void pretrain_fb();
  void train_defense();
  void run_attacks();
  EvalReport evaluate();           // full pipeline; writes report.json
  EvalReport write_report_only();  // re-emit from stored attack results

  // parameter: defense.N | defense.delta | attack.eot_samples
  void sweep(const std::string& parameter, const std::vector<std::string>& values);

  const ExperimentConfig& config() const { return cfg_; }
  const std::string& out_dir() const { return cfg_.out_dir; }

 private:
  struct State;
  ExperimentConfig cfg_;
  std::string cache_dir_;
  std::shared_ptr<State> state_;

  void ensure_data();
  void ensure_fb();
  void ensure_fa();
  void ensure_attacks();
  EvalReport assemble_report() const;
  template <typename Fn>
  void phase(const std::string& name, Fn&& fn);
};

EvalReport run_experiment(const std::string& config_path);

}  // namespace advt::harness
