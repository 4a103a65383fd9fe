#include <cmath>
#include <regex>

#include "doctest.h"
#include "dbr/core/random.hpp"
#include "dbr/errors.hpp"
#include "dbr/metrics/metrics.hpp"

using namespace dbr;
using namespace dbr::metrics;

namespace {

struct Pair {
  std::vector<int> preds, labels;
};

// Every class appears at least once among the labels.
Pair random_pair(core::Rng& rng, std::size_t C, std::size_t n) {
  Pair p;
  for (std::size_t k = 0; k < n; ++k) {
    p.labels.push_back(k < C ? int(k) : int(core::uniform_index(rng, C)));
    // Biased toward correct predictions so metrics are not all near 1/C.
    p.preds.push_back(core::uniform(rng, 0, 1) < 0.5 ? p.labels.back()
                                                   : int(core::uniform_index(rng, C)));
  }
  return p;
}

struct Tally {
  std::vector<double> tp, fp, fn;
};

Tally tally(const Pair& p, std::size_t C) {
  Tally t{std::vector<double>(C), std::vector<double>(C), std::vector<double>(C)};
  for (std::size_t k = 0; k < p.labels.size(); ++k) {
    for (std::size_t c = 0; c < C; ++c) {
      const bool is_true = p.labels[k] == int(c), is_pred = p.preds[k] == int(c);
      if (is_true && is_pred) t.tp[c] += 1;
      if (!is_true && is_pred) t.fp[c] += 1;
      if (is_true && !is_pred) t.fn[c] += 1;
    }
  }
  return t;
}

}  // namespace

TEST_CASE("confusion matrix examples") {
  const std::vector<int> y{0, 1, 2, 2, 1};
  auto cm = confusion(y, y, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(cm.at(i, j) == (i == j ? cm.row_sum(i) : 0));
  CHECK(cm.total() == 5);

  const std::vector<int> zeros(5, 0);
  auto col = confusion(zeros, y, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(col.at(i, 1) == 0);
    CHECK(col.at(i, 2) == 0);
  }
  CHECK(col.col_sum(0) == 5);

  CHECK_THROWS_AS(confusion(std::vector<int>{0}, std::vector<int>{0, 1}, 2), DataError);
  CHECK_THROWS_AS(confusion(std::vector<int>{3}, std::vector<int>{0}, 2), DataError);
  CHECK_THROWS_AS(confusion(std::vector<int>{0}, std::vector<int>{-1}, 2), DataError);
}

TEST_CASE("confusion matches pairwise counting") {
  core::Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t C = 2 + core::uniform_index(rng, 12);
    auto p = random_pair(rng, C, C + core::uniform_index(rng, 300));
    auto cm = confusion(p.preds, p.labels, C);
    bool ok = true;
    for (std::size_t i = 0; i < C; ++i)
      for (std::size_t j = 0; j < C; ++j) {
        std::uint64_t n = 0;
        for (std::size_t k = 0; k < p.labels.size(); ++k)
          n += p.labels[k] == int(i) && p.preds[k] == int(j);
        ok = ok && n == cm.at(i, j);
      }
    CHECK(ok);
    CHECK(cm.total() == p.labels.size());
  }
}

TEST_CASE("headline metrics examples") {
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  auto perfect = report(y, y, {"a", "b", "c"});
  CHECK(perfect.balanced_accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
  CHECK(perfect.macro_recall == 1.0);
  CHECK(perfect.warnings.empty());

  const std::vector<int> lab{0, 0, 1, 1}, constant{1, 1, 1, 1};
  auto half = report(constant, lab, {"n", "p"});
  CHECK(half.balanced_accuracy == 0.5);
  CHECK(half.per_class[0].precision == 0.0);
  CHECK(half.per_class[0].recall == 0.0);
  CHECK(half.per_class[0].f1 == 0.0);
  REQUIRE(half.warnings.size() == 1);
  CHECK(half.warnings[0].find("class n is never predicted") != std::string::npos);

  CHECK_THROWS_WITH_AS(balanced_accuracy(confusion(std::vector<int>{0}, std::vector<int>{0}, 2,
                                                   {"first", "second"})),
                       doctest::Contains("class second"), DataError);
}

TEST_CASE("F-beta formula on a hand-built matrix") {
  // truth 0: 8 right, 2 wrong; truth 1: 3 wrong, 7 right.
  ConfusionMatrix cm{{"a", "b"}, {8, 2, 3, 7}};
  const double r0 = 0.8, p0 = 8.0 / 11.0, r1 = 0.7, p1 = 7.0 / 9.0;
  auto f2 = [](double r, double p) { return 5.0 * r * p / (4.0 * r + p); };
  CHECK(std::abs(macro_f1(cm, 2.0) - 0.5 * (f2(r0, p0) + f2(r1, p1))) < 1e-15);
  auto f = fbeta_per_class(cm, 1.0);
  CHECK(std::abs(f[0] - 2 * r0 * p0 / (r0 + p0)) < 1e-15);
  // Equal precision and recall per class: macro F1 equals macro recall.
  ConfusionMatrix sym{{"a", "b", "c"}, {5, 1, 0, 0, 5, 1, 1, 0, 5}};
  CHECK(macro_f1(sym) == doctest::Approx(macro_recall(sym)).epsilon(1e-15));
  CHECK(std::abs(macro_f1(sym) - balanced_accuracy(sym)) < 1e-15);
}

TEST_CASE("metrics match brute-force tallies") {
  core::Rng rng(2);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t C = 2 + core::uniform_index(rng, 12);
    auto p = random_pair(rng, C, C + core::uniform_index(rng, 400));
    auto t = tally(p, C);
    auto r = report(p.preds, p.labels, std::vector<std::string>(C, "x"));
    double ba = 0, f1 = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const double rec = t.tp[c] / (t.tp[c] + t.fn[c]);
      const double prec = t.tp[c] + t.fp[c] > 0 ? t.tp[c] / (t.tp[c] + t.fp[c]) : 0.0;
      const double f = rec + prec > 0 ? 2 * rec * prec / (rec + prec) : 0.0;
      worst = std::max(worst, std::abs(rec - r.per_class[c].recall));
      worst = std::max(worst, std::abs(prec - r.per_class[c].precision));
      ba += rec / double(C);
      f1 += f / double(C);
    }
    worst = std::max({worst, std::abs(ba - r.balanced_accuracy), std::abs(ba - r.macro_recall),
                      std::abs(f1 - r.macro_f1)});
    CHECK(r.balanced_accuracy >= 0.0);
    CHECK(r.balanced_accuracy <= 1.0);
    CHECK(r.macro_f1 >= 0.0);
    CHECK(r.macro_f1 <= 1.0);
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("scale invariance and dependence on the confusion matrix only") {
  core::Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + core::uniform_index(rng, 6);
    auto p = random_pair(rng, C, 50);
    Pair k3 = p;
    for (int rep = 0; rep < 2; ++rep) {
      k3.preds.insert(k3.preds.end(), p.preds.begin(), p.preds.end());
      k3.labels.insert(k3.labels.end(), p.labels.begin(), p.labels.end());
    }
    CHECK(balanced_accuracy(confusion(k3.preds, k3.labels, C)) ==
          doctest::Approx(balanced_accuracy(confusion(p.preds, p.labels, C))).epsilon(1e-15));
    // Reordering samples leaves the matrix and hence the report unchanged.
    Pair shuffled = p;
    std::vector<std::size_t> idx(p.preds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    core::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      shuffled.preds[i] = p.preds[idx[i]];
      shuffled.labels[i] = p.labels[idx[i]];
    }
    const std::vector<std::string> names(C, "c");
    CHECK(report(shuffled.preds, shuffled.labels, names) == report(p.preds, p.labels, names));
  }
}

TEST_CASE("report serialization and emitted files") {
  core::Rng rng(4);
  auto p = random_pair(rng, 4, 200);
  p.preds[0] = 0;
  for (auto& v : p.preds) if (v == 3) v = 2;  // class 3 never predicted
  auto r = report(p.preds, p.labels, {"OFL", "PDIL", "S&O", "SA"});
  CHECK(EvalReport::from_json(nlohmann::json::parse(r.to_json().dump())) == r);
  CHECK(!r.warnings.empty());

  const auto tsv = format_metrics_tsv(r);
  std::smatch m;
  REQUIRE(std::regex_search(tsv, m, std::regex("balanced_accuracy\t([^\n]+)")));
  CHECK(std::stod(m[1]) == r.balanced_accuracy);
  CHECK(format_table(r).find("warning: class SA") != std::string::npos);

  const auto svg = confusion_svg(r);
  CHECK(svg.find("S&amp;O") != std::string::npos);
  std::regex cell("data-row=\"(\\d+)\" data-col=\"(\\d+)\" data-value=\"([^\"]+)\"");
  std::size_t cells = 0;
  std::vector<double> row_sums(4, 0.0);
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), cell); it != std::sregex_iterator(); ++it) {
    ++cells;
    const std::size_t i = std::stoul((*it)[1]), j = std::stoul((*it)[2]);
    const double v = std::stod((*it)[3]);
    row_sums[i] += v;
    CHECK(v == doctest::Approx(double(r.confusion.at(i, j)) / double(r.confusion.row_sum(i))));
  }
  CHECK(cells == 16);
  for (double s : row_sums) CHECK(s == doctest::Approx(1.0));

  const auto bars = per_class_svg(r);
  std::regex bar("data-metric=\"recall\" data-value=\"([^\"]+)\"");
  std::size_t k = 0;
  for (auto it = std::sregex_iterator(bars.begin(), bars.end(), bar); it != std::sregex_iterator(); ++it) {
    CHECK(std::stod((*it)[1]) == r.per_class[k++].recall);
  }
  CHECK(k == 4);

  const auto cmp = format_comparison({{"fusion", r}, {"hmm", r}});
  CHECK(cmp.find("balanced accuracy") != std::string::npos);
  CHECK(format_comparison_tsv({{"fusion", r}}).find("fusion\t") != std::string::npos);
}
