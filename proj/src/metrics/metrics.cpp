#include "dbr/metrics/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "dbr/errors.hpp"

namespace dbr::metrics {

namespace {

std::string exact(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// White to dark blue.
std::string heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(247 - v * (247 - 8)));
  const int g = static_cast<int>(std::lround(251 - v * (251 - 48)));
  const int b = static_cast<int>(std::lround(255 - v * (255 - 107)));
  std::ostringstream os;
  os << "rgb(" << r << ',' << g << ',' << b << ')';
  return os.str();
}

}  // namespace

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < num_classes(); ++j) s += at(c, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < num_classes(); ++i) s += at(i, c);
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels,
                          std::size_t num_classes, std::vector<std::string> class_names) {
  if (preds.size() != labels.size()) {
    throw DataError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                    std::to_string(labels.size()) + " labels");
  }
  if (num_classes == 0) throw DataError("confusion: no classes");
  if (class_names.empty()) {
    for (std::size_t c = 0; c < num_classes; ++c) class_names.push_back(std::to_string(c));
  }
  if (class_names.size() != num_classes) throw DataError("confusion: class name count mismatch");
  ConfusionMatrix cm{std::move(class_names), std::vector<std::uint64_t>(num_classes * num_classes, 0)};
  const auto C = static_cast<long long>(num_classes);
  for (std::size_t k = 0; k < preds.size(); ++k) {
    if (labels[k] < 0 || labels[k] >= C || preds[k] < 0 || preds[k] >= C) {
      throw DataError("confusion: entry " + std::to_string(k) + " (label " +
                      std::to_string(labels[k]) + ", prediction " + std::to_string(preds[k]) +
                      ") outside [0, " + std::to_string(num_classes) + ")");
    }
    ++cm.counts[static_cast<std::size_t>(labels[k]) * num_classes + static_cast<std::size_t>(preds[k])];
  }
  return cm;
}

std::vector<double> recall_per_class(const ConfusionMatrix& cm) {
  std::vector<double> r(cm.num_classes());
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const std::uint64_t n = cm.row_sum(c);
    if (n == 0) {
      throw DataError("class " + cm.class_names[c] + " has no samples in the evaluation set");
    }
    r[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(n);
  }
  return r;
}

std::vector<double> precision_per_class(const ConfusionMatrix& cm) {
  std::vector<double> p(cm.num_classes(), 0.0);
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const std::uint64_t n = cm.col_sum(c);
    if (n > 0) p[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(n);
  }
  return p;
}

std::vector<double> fbeta_per_class(const ConfusionMatrix& cm, double beta) {
  const auto r = recall_per_class(cm);
  const auto p = precision_per_class(cm);
  const double b2 = beta * beta;
  std::vector<double> f(cm.num_classes(), 0.0);
  for (std::size_t c = 0; c < f.size(); ++c) {
    const double den = b2 * r[c] + p[c];
    if (den > 0) f[c] = (1 + b2) * r[c] * p[c] / den;
  }
  return f;
}

double balanced_accuracy(const ConfusionMatrix& cm) { return mean(recall_per_class(cm)); }
double macro_recall(const ConfusionMatrix& cm) { return mean(recall_per_class(cm)); }
double macro_f1(const ConfusionMatrix& cm, double beta) { return mean(fbeta_per_class(cm, beta)); }

double micro_recall(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total();
  if (n == 0) throw DataError("empty evaluation set");
  std::uint64_t hit = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) hit += cm.at(c, c);
  return static_cast<double>(hit) / static_cast<double>(n);
}

EvalReport report(const ConfusionMatrix& cm) {
  EvalReport r;
  r.confusion = cm;
  const auto rec = recall_per_class(cm);
  const auto prec = precision_per_class(cm);
  const auto f = fbeta_per_class(cm, 1.0);
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    r.per_class.push_back({cm.class_names[c], rec[c], prec[c], f[c], cm.row_sum(c)});
    if (cm.col_sum(c) == 0) {
      r.warnings.push_back("class " + cm.class_names[c] + " is never predicted; precision set to 0");
    }
  }
  r.balanced_accuracy = mean(rec);
  r.macro_recall = mean(rec);
  r.macro_f1 = mean(f);
  r.micro_recall = micro_recall(cm);
  return r;
}

EvalReport report(std::span<const int> preds, std::span<const int> labels,
                  const std::vector<std::string>& class_names) {
  return report(confusion(preds, labels, class_names.size(), class_names));
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : per_class) {
    per.push_back({{"name", c.name},
                   {"recall", c.recall},
                   {"precision", c.precision},
                   {"f1", c.f1},
                   {"support", c.support}});
  }
  return {{"balanced_accuracy", balanced_accuracy},
          {"macro_f1", macro_f1},
          {"macro_recall", macro_recall},
          {"micro_recall", micro_recall},
          {"per_class", per},
          {"confusion", {{"class_names", confusion.class_names}, {"counts", confusion.counts}}},
          {"warnings", warnings}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.balanced_accuracy = j.at("balanced_accuracy").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.macro_recall = j.at("macro_recall").get<double>();
    r.micro_recall = j.at("micro_recall").get<double>();
    for (const auto& c : j.at("per_class")) {
      r.per_class.push_back({c.at("name").get<std::string>(), c.at("recall").get<double>(),
                             c.at("precision").get<double>(), c.at("f1").get<double>(),
                             c.at("support").get<std::uint64_t>()});
    }
    r.confusion.class_names = j.at("confusion").at("class_names").get<std::vector<std::string>>();
    r.confusion.counts = j.at("confusion").at("counts").get<std::vector<std::uint64_t>>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("evaluation report: ") + e.what());
  }
  const std::size_t C = r.confusion.class_names.size();
  if (r.confusion.counts.size() != C * C) throw DataError("evaluation report: bad confusion size");
  return r;
}

std::string format_table(const EvalReport& r) {
  std::size_t w = 5;
  for (const auto& c : r.per_class) w = std::max(w, c.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "class" << std::right << std::setw(10)
     << "recall" << std::setw(11) << "precision" << std::setw(10) << "f1" << std::setw(10)
     << "support" << '\n';
  for (const auto& c : r.per_class) {
    os << std::left << std::setw(static_cast<int>(w)) << c.name << std::right << std::setw(10)
       << fixed(c.recall, 4) << std::setw(11) << fixed(c.precision, 4) << std::setw(10)
       << fixed(c.f1, 4) << std::setw(10) << c.support << '\n';
  }
  os << '\n'
     << "balanced accuracy  " << fixed(r.balanced_accuracy, 4) << '\n'
     << "macro F1           " << fixed(r.macro_f1, 4) << '\n'
     << "macro recall       " << fixed(r.macro_recall, 4) << '\n'
     << "micro recall       " << fixed(r.micro_recall, 4) << '\n';
  for (const auto& wmsg : r.warnings) os << "warning: " << wmsg << '\n';
  return os.str();
}

std::string format_metrics_tsv(const EvalReport& r) {
  std::ostringstream os;
  os << "metric\tvalue\n"
     << "balanced_accuracy\t" << exact(r.balanced_accuracy) << '\n'
     << "macro_f1\t" << exact(r.macro_f1) << '\n'
     << "macro_recall\t" << exact(r.macro_recall) << '\n'
     << "micro_recall\t" << exact(r.micro_recall) << '\n';
  for (const auto& c : r.per_class) {
    os << "recall." << c.name << '\t' << exact(c.recall) << '\n'
       << "precision." << c.name << '\t' << exact(c.precision) << '\n'
       << "f1." << c.name << '\t' << exact(c.f1) << '\n'
       << "support." << c.name << '\t' << c.support << '\n';
  }
  return os.str();
}

std::string format_comparison(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t w = 6;
  for (const auto& [name, _] : rows) w = std::max(w, name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "method" << std::right << std::setw(20)
     << "balanced accuracy" << std::setw(12) << "F1-score" << std::setw(10) << "recall" << '\n';
  for (const auto& [name, r] : rows) {
    os << std::left << std::setw(static_cast<int>(w)) << name << std::right << std::setw(20)
       << fixed(r.balanced_accuracy, 4) << std::setw(12) << fixed(r.macro_f1, 4) << std::setw(10)
       << fixed(r.macro_recall, 4) << '\n';
  }
  return os.str();
}

std::string format_comparison_tsv(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ostringstream os;
  os << "method\tbalanced_accuracy\tmacro_f1\tmacro_recall\tmicro_recall\n";
  for (const auto& [name, r] : rows) {
    os << name << '\t' << exact(r.balanced_accuracy) << '\t' << exact(r.macro_f1) << '\t'
       << exact(r.macro_recall) << '\t' << exact(r.micro_recall) << '\n';
  }
  return os.str();
}

std::string confusion_svg(const EvalReport& r) {
  const auto& cm = r.confusion;
  const std::size_t C = cm.num_classes();
  const int cell = 44, left = 90, top = 40;
  const int size = static_cast<int>(C) * cell;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + size + 20 << "\" height=\""
     << top + size + 80 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << left + size / 2 << "\" y=\"20\" text-anchor=\"middle\">predicted</text>\n";
  for (std::size_t i = 0; i < C; ++i) {
    const double row = static_cast<double>(cm.row_sum(i));
    const int y = top + static_cast<int>(i) * cell;
    os << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">"
       << xml_escape(cm.class_names[i]) << "</text>\n";
    for (std::size_t j = 0; j < C; ++j) {
      const double v = row > 0 ? static_cast<double>(cm.at(i, j)) / row : 0.0;
      const int x = left + static_cast<int>(j) * cell;
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
         << "\" fill=\"" << heat_color(v) << "\" stroke=\"#ccc\" data-row=\"" << i
         << "\" data-col=\"" << j << "\" data-value=\"" << exact(v) << "\"/>\n";
      os << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
         << "\" text-anchor=\"middle\" fill=\"" << (v > 0.5 ? "#fff" : "#000") << "\">"
         << fixed(v, 2) << "</text>\n";
    }
  }
  for (std::size_t j = 0; j < C; ++j) {
    const int x = left + static_cast<int>(j) * cell + cell / 2;
    const int y = top + size + 12;
    os << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"end\" transform=\"rotate(-45 "
       << x << ' ' << y << ")\">" << xml_escape(cm.class_names[j]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string per_class_svg(const EvalReport& r) {
  const std::size_t C = r.per_class.size();
  const int group = 54, bar = 14, left = 50, top = 30, height = 200;
  const int width = left + static_cast<int>(C) * group + 110;
  const char* colors[3] = {"#1f77b4", "#ff7f0e", "#2ca02c"};
  const char* names[3] = {"recall", "precision", "f1"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << top + height + 80 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int k = 0; k <= 4; ++k) {
    const int y = top + height - k * height / 4;
    os << "<line x1=\"" << left << "\" x2=\"" << left + static_cast<int>(C) * group << "\" y1=\""
       << y << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n"
       << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
       << fixed(k * 0.25, 2) << "</text>\n";
  }
  for (std::size_t c = 0; c < C; ++c) {
    const auto& m = r.per_class[c];
    const double vals[3] = {m.recall, m.precision, m.f1};
    const int gx = left + static_cast<int>(c) * group + 4;
    for (int k = 0; k < 3; ++k) {
      const double h = vals[k] * height;
      os << "<rect x=\"" << gx + k * bar << "\" y=\"" << fixed(top + height - h, 2)
         << "\" width=\"" << bar - 1 << "\" height=\"" << fixed(h, 2) << "\" fill=\"" << colors[k]
         << "\" data-class=\"" << xml_escape(m.name) << "\" data-metric=\"" << names[k]
         << "\" data-value=\"" << exact(vals[k]) << "\"/>\n";
    }
    const int x = gx + 3 * bar / 2, y = top + height + 12;
    os << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"end\" transform=\"rotate(-45 "
       << x << ' ' << y << ")\">" << xml_escape(m.name) << "</text>\n";
  }
  for (int k = 0; k < 3; ++k) {
    const int x = left + static_cast<int>(C) * group + 16, y = top + 10 + k * 18;
    os << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\""
       << colors[k] << "\"/>\n<text x=\"" << x + 14 << "\" y=\"" << y << "\">" << names[k]
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace dbr::metrics
