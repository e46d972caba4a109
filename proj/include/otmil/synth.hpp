#pragma once
// Synthetic long-tailed feature bags with a survival signal tied to the
// prevalence of one designated "prognostic" morphological component.
//
// Per bag: the component mixture is a Dirichlet draw centered on power-law
// weights (rank^-tail_exponent), instances sample components from it, and
// features come from component-specific Gaussians. Survival times follow an
// exponential model whose log-hazard is effect_size times the (optionally
// dataset-standardized) prognostic prevalence. Censored subjects get a
// uniform fraction of their event time. Generation is single-threaded and
// byte-deterministic for a given config.

#include <otmil/bag.hpp>
#include <otmil/bag_io.hpp>
#include <otmil/common.hpp>
#include <otmil/csv.hpp>
#include <otmil/manifest.hpp>
#include <otmil/rng.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace otmil {

struct SynthConfig {
  int n_bags = 400;
  int min_instances = 60;
  int max_instances = 200;
  int feature_dim = 32;  // D
  int n_morph_components = 6;
  double tail_exponent = 1.0;   // power-law weight ~ rank^-tail_exponent
  int prognostic_component = 2;
  double effect_size = 2.0;     // log-hazard per unit of (standardized) prevalence
  double censoring_rate = 0.2;  // in [0, 1)
  double noise_sigma = 0.5;
  double mixture_jitter = 4.0;  // Dirichlet concentration multiplier
  bool standardize_prevalence = true;
  std::uint64_t seed = 1;

  void validate() const {
    require(n_bags >= 1, "n_bags must be positive");
    require(min_instances >= 1 && max_instances >= min_instances,
            "bad instance range");
    require(feature_dim >= 1, "feature_dim must be positive");
    require(n_morph_components >= 1, "n_morph_components must be positive");
    require(tail_exponent > 0.0, "tail_exponent must be positive");
    require(prognostic_component >= 0 &&
                prognostic_component < n_morph_components,
            "prognostic_component out of range");
    require(censoring_rate >= 0.0 && censoring_rate < 1.0,
            "censoring_rate must lie in [0, 1)");
    require(noise_sigma > 0.0, "noise_sigma must be positive");
    require(mixture_jitter > 0.0, "mixture_jitter must be positive");
  }
};

struct SynthBagTruth {
  std::string bag_id;
  double prevalence = 0.0;    // realized fraction of prognostic instances
  double z_prevalence = 0.0;  // standardized value actually used in the hazard
  double log_hazard = 0.0;
  double hazard = 0.0;
  std::vector<int> instance_components;
};

struct SynthResult {
  Manifest manifest;
  std::vector<SynthBagTruth> truth;
  double prevalence_mean = 0.0;
  double prevalence_sd = 1.0;
};

namespace detail {

inline std::string synth_bag_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "bag_%04d", index);
  return buf;
}

}  // namespace detail

// Separation between component means, in units of noise_sigma ~ O(1).
inline constexpr double kComponentSeparation = 3.0;

inline SynthResult synth_dataset(const SynthConfig& cfg,
                                 const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "bags");

  Rng rng(cfg.seed);
  const int n_comp = cfg.n_morph_components;

  // Component means: random directions scaled to a fixed separation.
  std::vector<Vector> means(n_comp);
  for (int c = 0; c < n_comp; ++c) {
    Vector mu(cfg.feature_dim);
    for (int j = 0; j < cfg.feature_dim; ++j) mu(j) = rng.normal();
    means[c] = mu * (kComponentSeparation / mu.norm());
  }

  std::vector<double> base_weights(n_comp);
  for (int c = 0; c < n_comp; ++c) {
    base_weights[c] = std::pow(static_cast<double>(c + 1), -cfg.tail_exponent);
  }
  double base_total = 0.0;
  for (double w : base_weights) base_total += w;
  for (double& w : base_weights) w /= base_total;

  // Phase 1: structure and features for every bag.
  std::vector<Bag> bags(cfg.n_bags);
  SynthResult result;
  result.truth.resize(cfg.n_bags);
  for (int b = 0; b < cfg.n_bags; ++b) {
    const int n_inst =
        cfg.min_instances +
        static_cast<int>(rng.below(
            static_cast<std::uint64_t>(cfg.max_instances - cfg.min_instances + 1)));

    std::vector<double> mix(n_comp);
    double mix_total = 0.0;
    for (int c = 0; c < n_comp; ++c) {
      mix[c] = rng.gamma(cfg.mixture_jitter * n_comp * base_weights[c]);
      mix_total += mix[c];
    }
    for (double& w : mix) w /= mix_total;

    Bag& bag = bags[b];
    bag.bag_id = detail::synth_bag_id(b);
    bag.features.resize(n_inst, cfg.feature_dim);
    SynthBagTruth& truth = result.truth[b];
    truth.bag_id = bag.bag_id;
    truth.instance_components.resize(n_inst);
    int prognostic_count = 0;
    for (int i = 0; i < n_inst; ++i) {
      const int c = rng.categorical(mix);
      truth.instance_components[i] = c;
      if (c == cfg.prognostic_component) ++prognostic_count;
      for (int j = 0; j < cfg.feature_dim; ++j) {
        bag.features(i, j) = means[c](j) + cfg.noise_sigma * rng.normal();
      }
      bag.instance_ids.push_back(bag.bag_id + ":" + std::to_string(i));
    }
    truth.prevalence = static_cast<double>(prognostic_count) / n_inst;
  }

  // Standardize prevalence across the dataset (see docs/FORMATS.md).
  double mean = 0.0;
  for (const auto& t : result.truth) mean += t.prevalence;
  mean /= cfg.n_bags;
  double var = 0.0;
  for (const auto& t : result.truth) {
    const double d = t.prevalence - mean;
    var += d * d;
  }
  double sd = cfg.n_bags > 1 ? std::sqrt(var / (cfg.n_bags - 1)) : 0.0;
  if (sd <= 0.0) sd = 1.0;
  result.prevalence_mean = mean;
  result.prevalence_sd = sd;

  // Phase 2: survival sampling, in bag order.
  for (int b = 0; b < cfg.n_bags; ++b) {
    SynthBagTruth& truth = result.truth[b];
    truth.z_prevalence = cfg.standardize_prevalence
                             ? (truth.prevalence - mean) / sd
                             : truth.prevalence;
    truth.log_hazard = cfg.effect_size * truth.z_prevalence;
    truth.hazard = std::exp(truth.log_hazard);
    const double event_time = rng.exponential(truth.hazard);
    const bool censor = rng.uniform() < cfg.censoring_rate;
    if (censor) {
      const double frac = 1.0 - rng.uniform();  // (0, 1]
      bags[b].time = event_time * frac;
      bags[b].event = false;
    } else {
      bags[b].time = event_time;
      bags[b].event = true;
    }
  }

  // Write bags, manifest, and ground truth.
  Manifest manifest;
  for (int b = 0; b < cfg.n_bags; ++b) {
    const std::string rel = "bags/" + bags[b].bag_id + ".otb";
    write_bag(bags[b], (fs::path(out_dir) / rel).string());
    ManifestEntry e;
    e.bag_id = bags[b].bag_id;
    e.path = rel;
    e.time = bags[b].time;
    e.event = bags[b].event;
    e.fold = -1;
    e.cohort = "synth";
    manifest.entries.push_back(std::move(e));
  }
  manifest.write((fs::path(out_dir) / "manifest.tsv").string());

  std::string bag_csv =
      "bag_id,prevalence,z_prevalence,log_hazard,hazard,prevalence_mean,"
      "prevalence_sd\n";
  for (const auto& t : result.truth) {
    bag_csv += t.bag_id + "," + format_g17(t.prevalence) + "," +
               format_g17(t.z_prevalence) + "," + format_g17(t.log_hazard) +
               "," + format_g17(t.hazard) + "," + format_g17(mean) + "," +
               format_g17(sd) + "\n";
  }
  write_text_file((fs::path(out_dir) / "ground_truth_bags.csv").string(),
                  bag_csv);

  std::string inst_csv = "bag_id,instance_id,component\n";
  for (int b = 0; b < cfg.n_bags; ++b) {
    const auto& t = result.truth[b];
    for (std::size_t i = 0; i < t.instance_components.size(); ++i) {
      inst_csv += t.bag_id + "," + bags[b].instance_ids[i] + "," +
                  std::to_string(t.instance_components[i]) + "\n";
    }
  }
  write_text_file((fs::path(out_dir) / "ground_truth_instances.csv").string(),
                  inst_csv);

  result.manifest = std::move(manifest);
  return result;
}

}  // namespace otmil
