#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>

#include "doctest.h"
#include "dbr/core/random.hpp"
#include "dbr/data/pipeline.hpp"
#include "dbr/data/prepared.hpp"
#include "dbr/errors.hpp"
#include "dbr/io/container.hpp"

using namespace dbr::data;
namespace fs = std::filesystem;

namespace {

Trajectory make_traj(const std::string& id, std::size_t len, int label = 0) {
  Trajectory t{id, AgentKind::vehicle, {}};
  for (std::size_t i = 0; i < len; ++i) {
    t.points.push_back({double(i), 0.5 * double(i), 0.0, 0.0, label, std::int64_t(i)});
  }
  return t;
}

std::vector<WindowSample> samples_with_counts(const std::vector<std::size_t>& counts) {
  std::vector<WindowSample> out;
  std::int64_t frame = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t k = 0; k < counts[c]; ++k) {
      WindowSample s;
      s.label = int(c);
      s.agent_id = "a" + std::to_string(c);
      s.end_frame = frame++;
      s.states[0] = double(s.end_frame);
      out.push_back(s);
    }
  }
  return out;
}

using Key = std::pair<std::string, std::int64_t>;
Key key(const WindowSample& s) { return {s.agent_id, s.end_frame}; }

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("dbr_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const LabelMap kLabels({"USD", "SA", "OFL"});

}  // namespace

TEST_CASE("load_trajectories: small files, ordering and errors") {
  SUBCASE("two rows, one agent") {
    auto t = parse_trajectories("agent_id,kind,frame,x,y,z,d,label\n"
                                "a,vehicle,0,1,2,0,0.1,USD\n"
                                "a,vehicle,1,1.5,2,0,0.1,SA\n",
                                kLabels);
    REQUIRE(t.size() == 1);
    CHECK(t[0].points.size() == 2);
    CHECK(t[0].points[1].label == 1);
  }
  SUBCASE("out-of-order rows sort by frame") {
    const std::string sorted = "agent_id,kind,frame,x,y,z,d,label\n"
                               "a,vehicle,1,1,2,0,0,USD\na,vehicle,2,2,2,0,0,USD\n"
                               "b,rider,5,0,0,0,0,SA\n";
    const std::string shuffled = "agent_id,kind,frame,x,y,z,d,label\n"
                                 "b,rider,5,0,0,0,0,SA\n"
                                 "a,vehicle,2,2,2,0,0,USD\na,vehicle,1,1,2,0,0,USD\n";
    CHECK(parse_trajectories(sorted, kLabels) == parse_trajectories(shuffled, kLabels));
  }
  SUBCASE("malformed rows reported with numbers") {
    const std::string bad = "agent_id,kind,frame,x,y,z,d,label\n"
                            "a,vehicle,0,1,2,0,0,USD\n"
                            "a,vehicle,1,oops,2,0,0,USD\n"
                            "a,vehicle,0,1,2,0,0,USD\n"
                            "a,vehicle,2,1,2\n"
                            "b,truck,0,0,0,0,0,NOPE\n";
    try {
      parse_trajectories(bad, kLabels);
      FAIL("expected DataError");
    } catch (const dbr::DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("4 malformed") != std::string::npos);
      CHECK(msg.find("row 3: x is not") != std::string::npos);
      CHECK(msg.find("row 4: duplicate") != std::string::npos);
      CHECK(msg.find("row 5: expected 8 columns") != std::string::npos);
      CHECK(msg.find("row 6: unknown kind") != std::string::npos);
      CHECK(msg.find("unknown label `NOPE`") != std::string::npos);
    }
  }
  SUBCASE("missing columns in header") {
    CHECK_THROWS_AS(parse_trajectories("agent_id,kind,frame,x,y\n", kLabels), dbr::DataError);
  }
  SUBCASE("degrees flag and angle wrapping") {
    auto t = parse_trajectories("agent_id,kind,frame,x,y,z,d,label\n"
                                "a,vehicle,0,0,0,0,180,USD\na,vehicle,1,0,0,0,-90,USD\n",
                                kLabels, {.degrees = true});
    CHECK(t[0].points[0].d == doctest::Approx(-std::numbers::pi));
    CHECK(t[0].points[1].d == doctest::Approx(-std::numbers::pi / 2));
    for (double a : {-10.0, -3.2, 0.0, 3.1415, 3.2, 7.0, 100.0}) {
      const double w = wrap_angle(a);
      CHECK(w >= -std::numbers::pi);
      CHECK(w < std::numbers::pi);
      CHECK(std::abs(std::remainder(w - a, 2 * std::numbers::pi)) < 1e-9);
    }
  }
}

TEST_CASE("trajectory file roundtrip for a 1000-agent dump") {
  dbr::core::Rng rng(3);
  std::vector<Trajectory> trajs;
  for (int a = 0; a < 1000; ++a) {
    char id[16];
    std::snprintf(id, sizeof id, "agent_%04d", a);
    Trajectory t{id, AgentKind(a % 3), {}};
    const std::size_t len = 1 + dbr::core::uniform_index(rng, 12);
    for (std::size_t i = 0; i < len; ++i) {
      t.points.push_back({dbr::core::uniform(rng, -50, 50), dbr::core::uniform(rng, -8, 8),
                          dbr::core::uniform(rng, -0.1, 0.1),
                          dbr::core::uniform(rng, -std::numbers::pi, std::numbers::pi),
                          int(dbr::core::uniform_index(rng, 3)), std::int64_t(10 * i + a % 7)});
    }
    trajs.push_back(t);
  }
  const fs::path dir = temp_dir("roundtrip");
  save_trajectories(dir / "t.csv", trajs, kLabels);
  save_label_map(dir / "labels.csv", kLabels);
  const LabelMap labels = load_label_map(dir / "labels.csv");
  CHECK(labels == kLabels);
  CHECK(load_trajectories(dir / "t.csv", labels) == trajs);
}

TEST_CASE("filter_short boundary") {
  std::vector<Trajectory> ts{make_traj("a", 6), make_traj("b", 7), make_traj("c", 30)};
  auto kept = filter_short(ts);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].agent_id == "b");
  CHECK(filter_short({}).empty());
}

TEST_CASE("window counts and labels") {
  CHECK(window(make_traj("a", 7)).size() == 3);
  auto one = make_traj("a", 5);
  one.points[4].label = 2;
  auto w = window(one);
  REQUIRE(w.size() == 1);
  CHECK(w[0].label == 2);
  CHECK(w[0].end_frame == 4);
  CHECK(w[0].at(4, 0) == 4.0);
  CHECK_THROWS_AS(window(make_traj("a", 4)), std::invalid_argument);

  // Labels varying along a length-20 trajectory: every window takes its last point's label.
  Trajectory t = make_traj("v", 20);
  for (std::size_t i = 0; i < 20; ++i) t.points[i].label = int((i * 7) % 3);
  auto ws = window(t);
  REQUIRE(ws.size() == 16);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    CHECK(ws[i].label == t.points[i + 4].label);
    CHECK(ws[i].at(0, 1) == t.points[i].y);
  }
  CHECK(window(make_traj("s", 11), 5, 3).size() == 3);
}

TEST_CASE("filter_rare_classes") {
  auto s = samples_with_counts({150, 99});
  auto r = filter_rare_classes(s, {"A", "B"});
  CHECK(r.class_names == std::vector<std::string>{"A"});
  CHECK(r.samples.size() == 150);
  CHECK(r.old_to_new == std::vector<int>{0, -1});

  auto all = samples_with_counts({100, 120, 300});
  auto id = filter_rare_classes(all, {"A", "B", "C"});
  CHECK(id.samples == all);
  CHECK(id.old_to_new == std::vector<int>{0, 1, 2});

  CHECK_THROWS_AS(filter_rare_classes(samples_with_counts({5, 5}), {"A", "B"}), dbr::ConfigError);

  dbr::core::Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> counts(6);
    for (auto& c : counts) c = dbr::core::uniform_index(rng, 220);
    if (*std::max_element(counts.begin(), counts.end()) < 100) counts[0] = 100;
    std::vector<std::string> names{"a", "b", "c", "d", "e", "f"};
    auto res = filter_rare_classes(samples_with_counts(counts), names, 100);
    std::vector<std::string> expect;
    std::size_t expect_n = 0;
    for (std::size_t c = 0; c < 6; ++c)
      if (counts[c] >= 100) {
        expect.push_back(names[c]);
        expect_n += counts[c];
      }
    CHECK(res.class_names == expect);
    CHECK(res.samples.size() == expect_n);
    auto h = histogram(res.samples, res.class_names.size());
    for (std::size_t c = 0; c < 6; ++c)
      if (res.old_to_new[c] >= 0) CHECK(h[res.old_to_new[c]] == counts[c]);
  }
}

TEST_CASE("split: stratified, deterministic, partition") {
  auto s = samples_with_counts({10, 25, 3});
  auto a = split(s, {"A", "B", "C"}, 0.8, 1);
  auto ha = histogram(a.train, 3), ta = histogram(a.test, 3);
  CHECK(ha == std::vector<std::size_t>{8, 20, 2});
  CHECK(ta == std::vector<std::size_t>{2, 5, 1});

  auto b = split(s, {"A", "B", "C"}, 0.8, 2);
  CHECK(histogram(b.train, 3) == ha);
  CHECK(a.train != b.train);
  auto a2 = split(s, {"A", "B", "C"}, 0.8, 1);
  CHECK(a2.train == a.train);
  CHECK(a2.test == a.test);

  std::multiset<Key> all, parts;
  for (auto& x : s) all.insert(key(x));
  std::set<Key> train_keys;
  for (auto& x : a.train) {
    parts.insert(key(x));
    train_keys.insert(key(x));
  }
  for (auto& x : a.test) {
    parts.insert(key(x));
    CHECK(train_keys.count(key(x)) == 0);
  }
  CHECK(all == parts);

  CHECK_THROWS_WITH_AS(split(samples_with_counts({5, 1}), {"A", "B"}, 0.8, 0),
                       doctest::Contains("class B"), dbr::ConfigError);

  dbr::core::Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> counts(5);
    for (auto& c : counts) c = 2 + dbr::core::uniform_index(rng, 300);
    auto sp = split(samples_with_counts(counts), {"a", "b", "c", "d", "e"}, 0.8, trial);
    auto h = histogram(sp.train, 5);
    for (std::size_t c = 0; c < 5; ++c) {
      const double n = double(counts[c]);
      const double frac = double(h[c]) / n;
      CHECK(frac <= 0.8 + 1e-12 + (h[c] == 1 ? 1.0 : 0.0));
      CHECK(frac >= 0.8 - 1.0 / n - 1e-12);
      CHECK(histogram(sp.test, 5)[c] >= 1);
    }
  }
}

TEST_CASE("ros, rus and class weights") {
  auto balanced = samples_with_counts({5, 5});
  CHECK(ros(balanced, 2, 0) == balanced);

  auto s = samples_with_counts({10, 3});
  auto r = ros(s, 2, 7);
  CHECK(histogram(r, 2) == std::vector<std::size_t>{10, 10});
  CHECK(std::equal(s.begin(), s.end(), r.begin()));
  std::set<Key> b_orig;
  for (auto& x : s)
    if (x.label == 1) b_orig.insert(key(x));
  for (std::size_t i = s.size(); i < r.size(); ++i) {
    CHECK(r[i].label == 1);
    CHECK(b_orig.count(key(r[i])) == 1);
  }
  CHECK(ros(s, 2, 7) == r);

  auto u = rus(s, 2, 7);
  CHECK(histogram(u, 2) == std::vector<std::size_t>{3, 3});
  std::set<Key> orig;
  for (auto& x : s) orig.insert(key(x));
  for (auto& x : u) CHECK(orig.count(key(x)) == 1);
  auto ub = rus(balanced, 2, 1);
  CHECK(std::is_permutation(ub.begin(), ub.end(), balanced.begin()));

  CHECK_THROWS_AS(ros(samples_with_counts({4, 0}), 2, 0), dbr::ConfigError);
  CHECK_THROWS_AS(rus(samples_with_counts({4, 0}), 2, 0), dbr::ConfigError);
  CHECK_THROWS_AS(ros({}, 2, 0), dbr::ConfigError);

  auto w = class_weights(samples_with_counts({30, 10}), 2);
  CHECK(w[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(w[1] == doctest::Approx(2.0).epsilon(1e-15));
  for (double x : class_weights(samples_with_counts({7, 7, 7}), 3)) CHECK(x == 1.0);
  CHECK_THROWS_AS(class_weights(samples_with_counts({3, 0}), 2), dbr::ConfigError);

  dbr::core::Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> counts(4);
    for (auto& c : counts) c = 1 + dbr::core::uniform_index(rng, 500);
    auto smp = samples_with_counts(counts);
    auto ww = class_weights(smp, 4);
    double acc = 0;
    for (std::size_t c = 0; c < 4; ++c) acc += ww[c] * double(counts[c]);
    CHECK(std::abs(acc - double(smp.size())) < 1e-9);
    auto under = rus(smp, 4, trial);
    const auto mn = *std::min_element(counts.begin(), counts.end());
    for (auto h : histogram(under, 4)) CHECK(h == mn);
  }
}

TEST_CASE("operations never mutate their inputs") {
  auto s = samples_with_counts({12, 4, 6});
  const auto copy = s;
  (void)ros(s, 3, 1);
  (void)rus(s, 3, 1);
  (void)split(s, {"a", "b", "c"}, 0.8, 1);
  (void)filter_rare_classes(s, {"a", "b", "c"}, 5);
  CHECK(s == copy);
}

TEST_CASE("prepare pipeline and dataset dump are deterministic") {
  std::vector<Trajectory> trajs;
  for (int a = 0; a < 60; ++a) {
    auto t = make_traj("agent" + std::to_string(100 + a), 6 + std::size_t(a % 5), a % 3);
    trajs.push_back(t);
  }
  PrepConfig cfg;
  cfg.min_class_count = 10;
  cfg.seed = 4;
  auto ds = prepare(trajs, kLabels, cfg);
  // Lengths 6..10 in turn: 12 trajectories of length 6 dropped.
  CHECK(ds.stages[2].count == 48);
  std::size_t expect_windows = 0;
  for (auto& t : trajs)
    if (t.points.size() >= 7) expect_windows += t.points.size() - 4;
  CHECK(ds.stages[3].count == expect_windows);
  CHECK(ds.split.train.size() + ds.split.test.size() == expect_windows);

  const auto bytes = encode_prepared(ds);
  CHECK(encode_prepared(prepare(trajs, kLabels, cfg)) == bytes);
  auto back = decode_prepared(bytes);
  CHECK(back.split.train == ds.split.train);
  CHECK(back.split.test == ds.split.test);
  CHECK(back.split.class_names == ds.split.class_names);
  CHECK(encode_prepared(back) == bytes);
  CHECK(back.training_set() == ds.training_set());

  auto corrupt = bytes;
  corrupt[corrupt.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(decode_prepared(corrupt), dbr::LoadError);

  cfg.normalize = true;
  auto normed = prepare(trajs, kLabels, cfg);
  REQUIRE(normed.feature_stats.has_value());
  auto back_n = decode_prepared(encode_prepared(normed));
  CHECK(back_n.feature_stats == normed.feature_stats);
}

TEST_CASE("feature standardization uses training statistics") {
  auto s = samples_with_counts({4, 4});
  auto st = compute_feature_stats(s);
  CHECK(st.stddev[1] == 1.0);  // constant feature keeps unit scale
  auto z = standardize(s[3], st);
  CHECK(z.states[0] == doctest::Approx((s[3].states[0] - st.mean[0]) / st.stddev[0]));
}
