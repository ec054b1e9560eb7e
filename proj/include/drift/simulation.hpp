#pragma once

#include <string>

#include "drift/maximin.hpp"
#include "drift/rng.hpp"

namespace drift {

struct SimConfig {
  int N = 300;
  int p = 5;  // includes intercept column x5 == 1
  int K = 3;
  int J = 30;
  int T = 1000;
  double r = 1.0;
  double sigma_v = 1.0;
  double sigma_v_external = 1.0;
  double beta_a = 5.0, beta_b = 1.5;
  Vector gamma_geo;          // default (1,1,1)
  Matrix Lambda0, Lambda1;   // K x p; explicit defaults shipped
  double item_intercept = 0.0;
  int reps = 100;
  std::uint64_t seed = 1;
  bool fresh_test_set = false;  // evaluate metrics on fresh covariate draws
  FactorConfig factor;

  void apply_defaults();
  void validate() const;
};

// Default treatment-response matrices: a documented seeded standard-normal
// draw scaled by 0.5, validated for rank-K difference and sign-heterogeneous
// effects.
std::pair<Matrix, Matrix> default_lambdas(int K = 3, int p = 5);

struct GroundTruth {
  Matrix Z0, Z1;      // N x K potential latent factors
  Matrix loadings;    // J x K item loadings
  Matrix B_true;      // p x K
};

struct ExternalOutcomes {
  Matrix loadings;       // T x K
  Matrix true_ite_coef;  // T x p, rows alpha_t' (Lambda1 - Lambda0)
};

struct MethodResult {
  std::string method;
  Vector acc;  // per external outcome
  Vector cor;  // NaN where flagged (zero variance)
  double acc_min = 0.0;
  double cor_min = 0.0;
  int cor_flagged = 0;
};

struct StudyRecord {
  std::string sweep_param;
  double sweep_value = 0.0;
  int rep = 0;
  std::string method;
  std::string metric;
  double value = 0.0;
};

struct StudyReport {
  std::vector<StudyRecord> records;
  int failures = 0;
  int total_runs = 0;
  std::vector<std::string> failure_messages;
};

enum class SweepParam { r, sigma_v };

struct Sweep {
  SweepParam param = SweepParam::r;
  std::vector<double> values;
};

Vector sample_loading(const SimConfig& config, Rng& rng);

std::pair<ResponseDataset, GroundTruth> generate_dataset(const SimConfig& config,
                                                         Rng& rng);

ExternalOutcomes generate_external(const SimConfig& config, Rng& rng);

std::vector<MethodResult> evaluate_methods(
    const std::vector<std::pair<std::string, Vector>>& predictions,
    const ExternalOutcomes& external, const Matrix& X_eval);

// Per-arm ridge logistic regressions of o on X; natural-parameter contrast.
Vector baseline_original_geo(const ResponseDataset& dataset);

// Predictions of all five methods on the training covariates.
std::vector<std::pair<std::string, Vector>> fit_all_methods(
    const ResponseDataset& dataset, const SimConfig& config);

StudyReport run_study(const SimConfig& config, const Sweep& sweep);

// Worker cap from DRIFT_THREADS (0 or unset = auto).
int study_thread_count();

}  // namespace drift
