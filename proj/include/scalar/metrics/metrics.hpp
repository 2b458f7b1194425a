#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scalar/data/scene.hpp"
#include "scalar/sampler/sampler.hpp"

namespace scalar::metrics {

using data::Image;
using data::Modality;

// Pixel-exact F1 over single-channel maps whose pixels are 0 (off) or 1/255 (on).
// Both empty -> 1, exactly one empty -> 0.
double f1_edge(const Image& pred, const Image& ref);
// Over all pixels and channels, on the stored 0..255 scale.
double rmse(const Image& pred, const Image& ref);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
// Mean SSIM over every fully-contained 11x11 Gaussian window; single channel.
double ssim(const Image& a, const Image& b);

// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)). Eigenvalues in [-1e-8, 0)
// are clamped to zero; more negative ones, or asymmetry above 1e-9 relative,
// are rejected.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2);

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased (n - 1)
};
Gaussian fit_gaussian(const std::vector<std::vector<double>>& features);

using Embedder = std::function<std::vector<double>(const Image&)>;
// 4x4 average-pooled RGB scaled to [0, 1]: 48 values for a 32x32 image.
std::vector<double> pooled_rgb(const Image& rgb);
double frechet_between(const Embedder& embed, const std::vector<Image>& a, const std::vector<Image>& b);

enum class Metric { F1, Rmse, Ssim };
Metric metric_for(Modality m);
std::string to_string(Metric m);
bool higher_is_better(Metric m);

// Re-extracts the modality from a generated RGB image and scores it against
// the condition that was used to generate it.
double consistency_score(Modality m, const Image& generated, const Image& condition);

struct ModalityScore {
  Modality modality = Modality::Edge;
  Metric metric = Metric::F1;
  double score = 0;
};

struct MetricReport {
  std::vector<ModalityScore> scores;
  std::optional<double> frechet;
  std::size_t count = 0;
  std::string config_hash;

  const ModalityScore& at(Modality m) const;
  std::string to_json() const;
  static std::string csv_header();
  std::vector<std::string> csv_rows() const;
};

// Produces one RGB image per sample, conditioned on that sample's `m` map.
// `offset` is the index of the first sample within the evaluation set.
using ImageGenerator =
    std::function<std::vector<Image>(std::span<const data::ConditionSample> batch, Modality m, std::size_t offset)>;

// A model with a bank and an encoder is driven by its control; without them
// it generates from the class label alone.
template <class T>
ImageGenerator model_generator(const ModelView<T>& model, const FeatureExtractor<T>* encoder,
                               const AlignmentHead<T>* align, const GuidanceConfig& guidance);

// Returns each sample's ground-truth image.
ImageGenerator oracle_generator();

struct EvalOptions {
  std::size_t batch = 32;
  const Embedder* embedder = nullptr;  // Frechet against ground truth when set
  std::string config_hash;
};

MetricReport consistency_eval(const ImageGenerator& generator, const std::vector<data::ConditionSample>& eval,
                              const std::vector<Modality>& modalities, const EvalOptions& options = {});

}  // namespace scalar::metrics
