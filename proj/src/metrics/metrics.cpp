#include "scalar/metrics/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "scalar/data/extract.hpp"

namespace scalar::metrics {

namespace {

void same_shape(const Image& a, const Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a.height) + "x" + std::to_string(a.width) + "x" +
                     std::to_string(a.channels) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                     "x" + std::to_string(b.channels));
  }
}

bool on(std::uint8_t v) {
  if (v != 0 && v != 1 && v != 255) throw std::invalid_argument("f1_edge: non-binary pixel value " + std::to_string(v));
  return v != 0;
}

std::vector<double> gaussian_window() {
  std::vector<double> w(kSsimWindow * kSsimWindow);
  const int r = kSsimWindow / 2;
  double z = 0;
  for (int y = 0; y < kSsimWindow; ++y)
    for (int x = 0; x < kSsimWindow; ++x) {
      const double d2 = (y - r) * (y - r) + (x - r) * (x - r);
      z += w[static_cast<std::size_t>(y * kSsimWindow + x)] = std::exp(-d2 / (2 * kSsimSigma * kSsimSigma));
    }
  for (auto& v : w) v /= z;
  return w;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw std::runtime_error("frechet_distance: eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-8) throw std::invalid_argument("frechet_distance: covariance is not positive semi-definite");
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void check_symmetric(const Eigen::MatrixXd& s) {
  if (s.rows() != s.cols()) throw ShapeError("frechet_distance: covariance is not square");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw std::invalid_argument("frechet_distance: covariance is not symmetric");
  }
}

}  // namespace

double f1_edge(const Image& pred, const Image& ref) {
  same_shape(pred, ref, "f1_edge");
  if (pred.channels != 1) throw std::invalid_argument("f1_edge expects single-channel maps");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const bool p = on(pred.pixels[i]), r = on(ref.pixels[i]);
    tp += p && r;
    fp += p && !r;
    fn += !p && r;
  }
  const std::size_t np = tp + fp, nr = tp + fn;
  if (np == 0 && nr == 0) return 1.0;
  if (np == 0 || nr == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(np + nr);
}

double rmse(const Image& pred, const Image& ref) {
  same_shape(pred, ref, "rmse");
  if (pred.pixels.empty()) throw std::invalid_argument("rmse of empty images");
  double s = 0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const double d = static_cast<double>(pred.pixels[i]) - static_cast<double>(ref.pixels[i]);
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(pred.pixels.size()));
}

double ssim(const Image& a, const Image& b) {
  same_shape(a, b, "ssim");
  if (a.channels != 1) throw std::invalid_argument("ssim expects single-channel images");
  if (a.height < kSsimWindow || a.width < kSsimWindow) {
    throw std::invalid_argument("ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                                " is smaller than the 11x11 window");
  }
  static const std::vector<double> w = gaussian_window();
  const double c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
  double total = 0;
  const int ny = a.height - kSsimWindow + 1, nx = a.width - kSsimWindow + 1;
  for (int y0 = 0; y0 < ny; ++y0)
    for (int x0 = 0; x0 < nx; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < kSsimWindow; ++dy)
        for (int dx = 0; dx < kSsimWindow; ++dx) {
          const double g = w[static_cast<std::size_t>(dy * kSsimWindow + dx)];
          const double va = a.at(y0 + dy, x0 + dx), vb = b.at(y0 + dy, x0 + dx);
          ma += g * va, mb += g * vb;
          saa += g * va * va, sbb += g * vb * vb, sab += g * va * vb;
        }
      saa -= ma * ma, sbb -= mb * mb, sab -= ma * mb;
      total += ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
    }
  return total / (static_cast<double>(ny) * nx);
}

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2) {
  const auto n = mu1.size();
  if (mu2.size() != n || s1.rows() != n || s2.rows() != n) throw ShapeError("frechet_distance: dimension mismatch");
  check_symmetric(s1);
  check_symmetric(s2);
  // (S1 S2)^(1/2) has the same trace as (R S2 R)^(1/2) with R = S1^(1/2).
  const Eigen::MatrixXd r = psd_sqrt(s1);
  Eigen::MatrixXd m = r * s2 * r;
  m = 0.5 * (m + m.transpose());
  const double tr_cross = psd_sqrt(m).trace();
  psd_sqrt(s2);  // rejects a non-PSD second covariance
  const double d = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2 * tr_cross;
  return std::max(d, 0.0);
}

Gaussian fit_gaussian(const std::vector<std::vector<double>>& features) {
  if (features.size() < 2) throw std::invalid_argument("fit_gaussian needs at least two feature vectors");
  const auto d = static_cast<Eigen::Index>(features[0].size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(features.size()), d);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (static_cast<Eigen::Index>(features[i].size()) != d) throw ShapeError("fit_gaussian: ragged features");
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(features[i].data(), d);
  }
  Gaussian g;
  g.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - g.mean.transpose();
  g.cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  return g;
}

std::vector<double> pooled_rgb(const Image& rgb) {
  if (rgb.channels != 3 || rgb.height % 4 || rgb.width % 4) {
    throw std::invalid_argument("pooled_rgb expects an RGB image with sides divisible by 4");
  }
  const int ph = rgb.height / 4, pw = rgb.width / 4;
  std::vector<double> out(48, 0.0);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x)
      for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(((y / ph) * 4 + x / pw) * 3 + c)] += rgb.at(y, x, c);
  for (auto& v : out) v /= 255.0 * ph * pw;
  return out;
}

double frechet_between(const Embedder& embed, const std::vector<Image>& a, const std::vector<Image>& b) {
  std::vector<std::vector<double>> fa, fb;
  for (const auto& im : a) fa.push_back(embed(im));
  for (const auto& im : b) fb.push_back(embed(im));
  const auto ga = fit_gaussian(fa), gb = fit_gaussian(fb);
  return frechet_distance(ga.mean, ga.cov, gb.mean, gb.cov);
}

Metric metric_for(Modality m) {
  switch (m) {
    case Modality::Edge:
    case Modality::Sketch: return Metric::F1;
    case Modality::Depth:
    case Modality::Normal: return Metric::Rmse;
    case Modality::Hed: return Metric::Ssim;
  }
  throw std::invalid_argument("unknown modality");
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::F1: return "f1";
    case Metric::Rmse: return "rmse";
    case Metric::Ssim: return "ssim";
  }
  return "?";
}

bool higher_is_better(Metric m) { return m != Metric::Rmse; }

double consistency_score(Modality m, const Image& generated, const Image& condition) {
  const Image re = data::reextract(generated, m);
  switch (metric_for(m)) {
    case Metric::F1: return f1_edge(re, condition);
    case Metric::Rmse: return rmse(re, condition);
    case Metric::Ssim: return ssim(re, condition);
  }
  return 0;
}

const ModalityScore& MetricReport::at(Modality m) const {
  for (const auto& s : scores)
    if (s.modality == m) return s;
  throw std::out_of_range("report has no score for " + std::string(data::modality_name(m)));
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["count"] = count;
  j["config_hash"] = config_hash;
  j["frechet"] = frechet ? nlohmann::ordered_json(*frechet) : nlohmann::ordered_json(nullptr);
  auto& arr = j["scores"] = nlohmann::ordered_json::array();
  for (const auto& s : scores) {
    arr.push_back({{"modality", data::modality_name(s.modality)}, {"metric", to_string(s.metric)}, {"score", s.score}});
  }
  return j.dump(2) + "\n";
}

std::string MetricReport::csv_header() { return "modality,metric,score,count,frechet,config_hash"; }

std::vector<std::string> MetricReport::csv_rows() const {
  std::vector<std::string> rows;
  for (const auto& s : scores) {
    std::ostringstream os;
    os << std::setprecision(17) << data::modality_name(s.modality) << ',' << to_string(s.metric) << ',' << s.score
       << ',' << count << ',';
    if (frechet) os << *frechet;
    os << ',' << config_hash;
    rows.push_back(os.str());
  }
  return rows;
}

template <class T>
ImageGenerator model_generator(const ModelView<T>& model, const FeatureExtractor<T>* encoder,
                               const AlignmentHead<T>* align, const GuidanceConfig& guidance) {
  return [model, encoder, align, guidance](std::span<const data::ConditionSample> batch, Modality m,
                                           std::size_t offset) {
    std::vector<ClassMix> classes;
    std::vector<const Image*> controls;
    for (const auto& s : batch) {
      classes.push_back(ClassMix::label(s.label));
      controls.push_back(&s.condition(m));
    }
    GuidanceConfig g = guidance;
    g.first_stream = offset;
    std::optional<Tensor<T>> features;
    ModelView<T> view = model;
    if (model.bank && encoder) {
      features = control_features<T>(*encoder, align, controls);
    } else {
      view.bank = nullptr;
    }
    const auto gen = generate<T>(view, classes, features, g);
    std::vector<Image> out;
    for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(tensor_to_image(gen.images, static_cast<std::int64_t>(i)));
    return out;
  };
}

ImageGenerator oracle_generator() {
  return [](std::span<const data::ConditionSample> batch, Modality, std::size_t) {
    std::vector<Image> out;
    for (const auto& s : batch) out.push_back(s.image);
    return out;
  };
}

MetricReport consistency_eval(const ImageGenerator& generator, const std::vector<data::ConditionSample>& eval,
                              const std::vector<Modality>& modalities, const EvalOptions& options) {
  if (eval.empty()) throw std::invalid_argument("consistency_eval: empty evaluation set");
  if (modalities.empty()) throw std::invalid_argument("consistency_eval: no modalities");
  if (options.batch == 0) throw std::invalid_argument("consistency_eval: batch must be positive");
  MetricReport report;
  report.count = eval.size();
  report.config_hash = options.config_hash;
  std::vector<Image> first_images;
  for (std::size_t mi = 0; mi < modalities.size(); ++mi) {
    const Modality m = modalities[mi];
    double sum = 0;
    for (std::size_t start = 0; start < eval.size(); start += options.batch) {
      const std::size_t n = std::min(options.batch, eval.size() - start);
      const std::span<const data::ConditionSample> batch(eval.data() + start, n);
      const auto images = generator(batch, m, start);
      if (images.size() != n) throw std::runtime_error("generator returned the wrong number of images");
      for (std::size_t i = 0; i < n; ++i) {
        sum += consistency_score(m, images[i], batch[i].condition(m));
        if (mi == 0 && options.embedder) first_images.push_back(images[i]);
      }
    }
    report.scores.push_back({m, metric_for(m), sum / static_cast<double>(eval.size())});
  }
  if (options.embedder) {
    std::vector<Image> truth;
    for (const auto& s : eval) truth.push_back(s.image);
    report.frechet = frechet_between(*options.embedder, first_images, truth);
  }
  return report;
}

template ImageGenerator model_generator(const ModelView<float>&, const FeatureExtractor<float>*,
                                        const AlignmentHead<float>*, const GuidanceConfig&);
template ImageGenerator model_generator(const ModelView<double>&, const FeatureExtractor<double>*,
                                        const AlignmentHead<double>*, const GuidanceConfig&);

}  // namespace scalar::metrics
