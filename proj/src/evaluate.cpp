#include "medusa/evaluate.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace medusa {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string flag(bool b) { return b ? "true" : "false"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::string EvalReport::summary_csv() const {
  std::ostringstream os;
  os << "key,value\n";
  os << "variant," << variant << '\n';
  os << "attention_present," << flag(attention_present) << '\n';
  os << "attention_enabled," << flag(attention_enabled) << '\n';
  os << "seg_ablation," << seg_ablation << '\n';
  os << "samples," << matrix.total() << '\n';
  os << "tp," << matrix.tp << "\nfp," << matrix.fp << "\ntn," << matrix.tn << "\nfn," << matrix.fn << '\n';
  os << "sensitivity," << metrics.sensitivity.str() << '\n';
  os << "ppv," << metrics.ppv.str() << '\n';
  os << "accuracy," << metrics.accuracy.str() << '\n';
  os << "mean_attention_mass," << (mean_attention_mass ? fmt(*mean_attention_mass) : "n/a") << '\n';
  os << "mean_mask_fraction," << (mean_mask_fraction ? fmt(*mean_mask_fraction) : "n/a") << '\n';
  return os.str();
}

std::string EvalReport::predictions_csv() const {
  std::ostringstream os;
  os << "id,label,predicted";
  const std::size_t k = predictions.empty() ? 0 : predictions.front().logits.size();
  for (std::size_t i = 0; i < k; ++i) os << ",logit" << i;
  os << '\n';
  for (const auto& p : predictions) {
    os << p.id << ',' << p.label << ',' << p.predicted;
    for (double l : p.logits) os << ',' << fmt(l);
    os << '\n';
  }
  return os.str();
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << "variant " << variant << ", attention " << (attention_present ? (attention_enabled ? "enabled" : "disabled") : "absent")
     << ", seg ablation " << seg_ablation << "\n\n";
  os << "                 predicted +  predicted -\n";
  char row[96];
  std::snprintf(row, sizeof row, "  actual +  %12lld %12lld\n", static_cast<long long>(matrix.tp),
                static_cast<long long>(matrix.fn));
  os << row;
  std::snprintf(row, sizeof row, "  actual -  %12lld %12lld\n\n", static_cast<long long>(matrix.fp),
                static_cast<long long>(matrix.tn));
  os << row;
  os << "  sensitivity  " << metrics.sensitivity.str() << '\n';
  os << "  ppv          " << metrics.ppv.str() << '\n';
  os << "  accuracy     " << metrics.accuracy.str() << '\n';
  if (mean_attention_mass) {
    os << "  attention mass inside mask  " << fmt(*mean_attention_mass) << " (mask area fraction "
       << fmt(mean_mask_fraction.value_or(0.0)) << ")\n";
  }
  return os.str();
}

void EvalReport::write(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "report.csv", summary_csv());
  write_text(dir / "predictions.csv", predictions_csv());
  write_text(dir / "report.txt", table());
}

template <typename T>
EvalReport evaluate(ModelBundle<T>& bundle, const Dataset& data, const EvalOptions& options) {
  if (data.empty()) throw StateError("cannot evaluate an empty dataset");
  const auto& bc = bundle.config.backbone;
  if (data.width != bc.width || data.height != bc.height || bc.in_channels != 1) {
    throw DimensionError("dataset images are " + std::to_string(data.width) + "x" + std::to_string(data.height) +
                         ", model expects " + std::to_string(bc.width) + "x" + std::to_string(bc.height));
  }
  if (options.batch_size < 1) throw ConfigError("batch_size must be >= 1");

  EvalReport report;
  report.variant = std::string(to_string(bundle.variant));
  report.attention_present = bundle.variant != Variant::plain;
  report.attention_enabled = report.attention_present && options.attention_enabled;

  const bool want_mass = bundle.variant == Variant::medusa && data.has_masks();
  double mass_sum = 0.0;
  double area_sum = 0.0;

  NoGradGuard<T> no_grad;
  const ForwardOptions fo = ForwardOptions::uniform(Mode::eval, options.attention_enabled);
  for (const auto& idx : batch_indices(data.size(), options.batch_size, std::nullopt)) {
    Batch<T> batch = make_batch<T>(data, idx);
    ForwardResult<T> r = forward(bundle, batch.images, fo);
    const int k = r.logits.shape().c;
    const auto logits = r.logits.data();
    const std::size_t plane = batch.images.shape().plane();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const Sample& s = data.samples[idx[b]];
      Prediction p;
      p.id = s.id;
      p.label = s.label;
      std::span<const T> row = logits.subspan(b * static_cast<std::size_t>(k), static_cast<std::size_t>(k));
      p.predicted = argmax_class(row);
      p.logits.assign(row.begin(), row.end());
      report.matrix.add(p.label, p.predicted);
      report.predictions.push_back(std::move(p));
      if (want_mass) {
        auto sigma = r.attention->sigma_a_g.data().subspan(b * plane, plane);
        mass_sum += attention_mass(sigma, std::span<const float>(s.mask));
        double area = 0.0;
        for (float m : s.mask) area += m > 0.0f ? 1.0 : 0.0;
        area_sum += area / static_cast<double>(plane);
      }
    }
  }
  report.metrics = classification_metrics(report.matrix);
  if (want_mass) {
    report.mean_attention_mass = mass_sum / static_cast<double>(data.size());
    report.mean_mask_fraction = area_sum / static_cast<double>(data.size());
  }
  return report;
}

template EvalReport evaluate<float>(ModelBundle<float>&, const Dataset&, const EvalOptions&);
template EvalReport evaluate<double>(ModelBundle<double>&, const Dataset&, const EvalOptions&);

}  // namespace medusa
