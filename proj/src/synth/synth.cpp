#include "dbr/synth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>

#include "dbr/core/random.hpp"
#include "dbr/errors.hpp"

namespace dbr::synth {

namespace {

using data::AgentKind;
using std::numbers::pi;

constexpr double kLane = 3.5;
constexpr double kSidewalk = 6.0;

// Agent state at time t: ego-relative position and ground-frame velocity.
struct State {
  double x = 0, y = 0, vx = 0, vy = 0;
};
using Motion = std::function<State(double)>;

struct Ctx {
  double T = 0;    // duration of the trajectory
  double ego = 0;  // ego speed
  bool overlap = true;
};

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }
double softplus(double u) { return u > 0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }

// Smooth step from 0 to 1 centered at c with width w, and its integral from 0.
double step(double t, double c, double w) { return sigmoid((t - c) / w); }
double step_rate(double t, double c, double w) {
  const double s = step(t, c, w);
  return s * (1 - s) / w;
}
double step_integral(double t, double c, double w) {
  return w * (softplus((t - c) / w) - softplus(-c / w));
}

double u(core::Rng& rng, double lo, double hi) { return core::uniform(rng, lo, hi); }
double sign(core::Rng& rng) { return core::uniform_index(rng, 2) == 0 ? -1.0 : 1.0; }

// Constant relative velocity with a fixed lateral offset.
Motion cruise(double x0, double v, double y, double ego) {
  return [=](double t) { return State{x0 + v * t, y, ego + v, 0.0}; };
}

// Constant relative acceleration, fixed lateral offset.
Motion accel(double x0, double v0, double a, double y, double ego) {
  return [=](double t) { return State{x0 + v0 * t + 0.5 * a * t * t, y, ego + v0 + a * t, 0.0}; };
}

// Passing: slow phase at v_p, then a smooth ramp to v_f so that x(T) = x_end.
Motion overtake(core::Rng& rng, const Ctx& c, double y) {
  const double x0 = u(rng, -7, -5);
  const double v_p = c.overlap ? u(rng, 0.2, 0.5) : u(rng, 1.5, 2.5);
  const double ts = c.T * (c.overlap ? u(rng, 0.4, 0.5) : 0.1);
  const double w = 0.04 * c.T;
  const double x_end = u(rng, 3, 6);
  const double ramp = step_integral(c.T, ts, w);
  const double v_f = v_p + (x_end - x0 - v_p * c.T) / ramp;
  const double ego = c.ego;
  return [=](double t) {
    const double v = v_p + (v_f - v_p) * step(t, ts, w);
    return State{x0 + v_p * t + (v_f - v_p) * step_integral(t, ts, w), y, ego + v, 0.0};
  };
}

// Lane change from y_from to y_to centered at tc, at constant relative speed.
Motion lane_change(double x0, double v, double y_from, double y_to, double tc, double w, double ego) {
  return [=](double t) {
    return State{x0 + v * t, y_from + (y_to - y_from) * step(t, tc, w), ego + v,
                 (y_to - y_from) * step_rate(t, tc, w)};
  };
}

// Decelerates at b (ground frame) from w0 until standing.
Motion stop(double x0, double y, double w0, double b, double ego) {
  const double t_stop = w0 / b;
  return [=](double t) {
    const double tt = std::min(t, t_stop);
    const double travelled = w0 * tt - 0.5 * b * tt * tt;
    return State{x0 + travelled - ego * t, y, w0 - b * tt, 0.0};
  };
}

// Moves across the road with ground velocity (vx, vy), crossing y = 0 at f*T.
Motion cross(double x0, double vx, double vy, double f, const Ctx& c) {
  const double y0 = -vy * f * c.T;
  const double ego = c.ego;
  return [=](double t) { return State{x0 + (vx - ego) * t, y0 + vy * t, vx, vy}; };
}

// Constant-speed turn: heading goes from 0 to `turn` over T.
Motion arc(double x0, double y0, double speed, double turn, const Ctx& c) {
  const double omega = turn / c.T;
  const double ego = c.ego;
  return [=](double t) {
    const double h = omega * t;
    return State{x0 + speed * std::sin(h) / omega - ego * t, y0 + speed * (1 - std::cos(h)) / omega,
                 speed * std::cos(h), speed * std::sin(h)};
  };
}

// ---- predicates on noiseless points ---------------------------------------

struct Series {
  std::vector<double> x, y, d, vx;  // vx: relative speed between consecutive points
};

Series series(const data::Trajectory& tr, double dt) {
  Series s;
  for (const auto& p : tr.points) {
    s.x.push_back(p.x);
    s.y.push_back(p.y);
    s.d.push_back(p.d);
  }
  for (std::size_t k = 1; k < s.x.size(); ++k) s.vx.push_back((s.x[k] - s.x[k - 1]) / dt);
  return s;
}

constexpr double kEps = 1e-9;

bool strictly(const std::vector<double>& v, int dir) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (dir * (v[k] - v[k - 1]) <= 0) return false;
  return true;
}
bool all_of(const std::vector<double>& v, const std::function<bool(double)>& f) {
  return std::all_of(v.begin(), v.end(), f);
}
bool near_const(const std::vector<double>& v) {
  return all_of(v, [&](double a) { return std::abs(a - v.front()) < kEps; });
}
bool in_lane(const std::vector<double>& y, double center) {
  return all_of(y, [&](double a) { return std::abs(a - center) < 0.5; });
}

using Check = std::function<std::string(const Series&, const Ctx&)>;

std::string require(bool ok, const char* what) { return ok ? "" : what; }

std::string passes(const Series& s, int side) {
  // side -1: passes on the left.
  const bool crosses = s.x.front() < 0 && s.x.back() > 0 && strictly(s.x, 1);
  if (!crosses) return "longitudinal position does not cross 0 from behind";
  for (std::size_t k = 0; k < s.x.size(); ++k)
    if (std::abs(s.x[k]) < 5 && side * s.y[k] <= 0) return "wrong lateral side during the pass";
  return "";
}

std::string parallel(const Series& s, int side) {
  if (!in_lane(s.y, side * kLane)) return "not in the adjacent lane";
  if (!all_of(s.vx, [](double v) { return std::abs(v) <= 0.5 + kEps; })) return "relative speed above 0.5 m/s";
  return require(all_of(s.x, [](double x) { return std::abs(x) < 10; }), "not beside the ego vehicle");
}

std::string away(const Series& s, int side) {
  if (!strictly(s.x, 1)) return "not moving away";
  if (!strictly(s.y, side)) return "lateral offset not monotone";
  if (std::abs(s.y.front()) >= 1) return "does not start in the ego lane";
  return require(side * s.y.back() >= kLane - 0.5, "does not end in the adjacent lane");
}

std::string cut_in(const Series& s, int side) {
  if (!strictly(s.y, -side)) return "lateral offset not monotone";
  if (side * s.y.front() < kLane - 0.5) return "does not start in the adjacent lane";
  if (std::abs(s.y.back()) >= 0.5) return "does not end in the ego lane";
  return require(all_of(s.x, [](double x) { return x > 0; }), "not ahead of the ego vehicle");
}

std::string crosses_road(const Series& s, int dir) {
  if (!strictly(s.y, dir)) return "lateral offset not monotone";
  return require(s.y.front() * s.y.back() < 0, "does not cross the ego path");
}

struct Template {
  TemplateInfo info;
  std::function<Motion(core::Rng&, const Ctx&)> make;
  Check check;
};

std::vector<Template> build_templates() {
  std::vector<Template> t;
  auto add = [&](std::string name, AgentKind kind, std::string desc,
                 std::function<Motion(core::Rng&, const Ctx&)> make, Check check) {
    t.push_back({{std::move(name), kind, std::move(desc)}, std::move(make), std::move(check)});
  };
  const auto V = AgentKind::vehicle, P = AgentKind::pedestrian, R = AgentKind::rider;

  // ---- vehicles
  add("OFL", V, "overtaking from left",
      [](core::Rng& r, const Ctx& c) { return overtake(r, c, -kLane + u(r, -0.2, 0.2)); },
      [](const Series& s, const Ctx&) { return passes(s, -1); });
  add("OFR", V, "overtaking from right",
      [](core::Rng& r, const Ctx& c) { return overtake(r, c, kLane + u(r, -0.2, 0.2)); },
      [](const Series& s, const Ctx&) { return passes(s, 1); });
  add("SD", V, "straight decelerating",
      [](core::Rng& r, const Ctx& c) {
        const double x0 = u(r, 45, 55), v0 = u(r, -3, -2), a = u(r, -1.2, -0.8);
        return accel(x0, v0, a, u(r, -0.2, 0.2), c.ego);
      },
      [](const Series& s, const Ctx&) {
        if (!strictly(s.vx, -1)) return std::string("relative speed not strictly decreasing");
        return require(in_lane(s.y, 0), "not in the ego lane");
      });
  add("DATL", V, "driving away to left",
      [](core::Rng& r, const Ctx& c) {
        const double x0 = u(r, 2, 6), v = u(r, 3, 5), tc = c.T * u(r, 0.2, 0.35);
        return lane_change(x0, v, 0.0, -kLane, tc, 0.1 * c.T, c.ego);
      },
      [](const Series& s, const Ctx&) { return away(s, -1); });
  add("DATR", V, "driving away to right",
      [](core::Rng& r, const Ctx& c) {
        const double x0 = u(r, 2, 6), v = u(r, 3, 5), tc = c.T * u(r, 0.2, 0.35);
        return lane_change(x0, v, 0.0, kLane, tc, 0.1 * c.T, c.ego);
      },
      [](const Series& s, const Ctx&) { return away(s, 1); });
  add("DIFL", V, "driving in from left",
      [](core::Rng& r, const Ctx& c) {
        const double x0 = u(r, 17, 22), v = u(r, -1.5, -0.5), tc = c.T * u(r, 0.6, 0.75);
        return lane_change(x0, v, -kLane, 0.0, tc, 0.1 * c.T, c.ego);
      },
      [](const Series& s, const Ctx&) { return cut_in(s, -1); });
  add("DIFR", V, "driving in from right",
      [](core::Rng& r, const Ctx& c) {
        const double x0 = u(r, 17, 22), v = u(r, -1.5, -0.5), tc = c.T * u(r, 0.6, 0.75);
        return lane_change(x0, v, kLane, 0.0, tc, 0.1 * c.T, c.ego);
      },
      [](const Series& s, const Ctx&) { return cut_in(s, 1); });
  add("SA", V, "straight accelerating",
      [](core::Rng& r, const Ctx& c) {
        const double x0 = u(r, 24, 30), v0 = u(r, 2, 3), a = u(r, 1.5, 2.5);
        return accel(x0, v0, a, u(r, -0.2, 0.2), c.ego);
      },
      [](const Series& s, const Ctx&) {
        if (!strictly(s.vx, 1)) return std::string("relative speed not strictly increasing");
        return require(in_lane(s.y, 0), "not in the ego lane");
      });
  add("USD", V, "uniformly straight driving",
      [](core::Rng& r, const Ctx& c) { return cruise(u(r, 8, 13), 0.0, u(r, -0.2, 0.2), c.ego); },
      [](const Series& s, const Ctx&) {
        if (!near_const(s.x) || !near_const(s.y)) return std::string("relative position not constant");
        return require(in_lane(s.y, 0), "not in the ego lane");
      });
  add("PDIL", V, "parallel driving in left",
      [](core::Rng& r, const Ctx& c) {
        return cruise(u(r, -7, 2), u(r, -0.5, 0.5), -kLane + u(r, -0.2, 0.2), c.ego);
      },
      [](const Series& s, const Ctx&) { return parallel(s, -1); });
  add("PDIR", V, "parallel driving in right",
      [](core::Rng& r, const Ctx& c) {
        return cruise(u(r, -7, 2), u(r, -0.5, 0.5), kLane + u(r, -0.2, 0.2), c.ego);
      },
      [](const Series& s, const Ctx&) { return parallel(s, 1); });
  add("S", V, "stopping",
      [](core::Rng& r, const Ctx& c) {
        const double x0 = u(r, 60, 70), w0 = u(r, 3, 4), b = w0 / (c.T * u(r, 0.4, 0.6));
        return stop(x0, u(r, -0.2, 0.2), w0, b, c.ego);
      },
      [](const Series& s, const Ctx& c) {
        if (!all_of(s.vx, [&](double v) { return v + c.ego > -kEps; })) return std::string("moves backward");
        for (std::size_t k = 1; k < s.vx.size(); ++k)
          if (s.vx[k] > s.vx[k - 1] + kEps) return std::string("ground speed increases");
        if (std::abs(s.vx.back() + c.ego) > 1e-6) return std::string("does not come to a stop");
        return require(s.vx.front() + c.ego > 0.5, "does not start moving");
      });
  add("O", V, "others (crossing traffic)",
      [](core::Rng& r, const Ctx& c) {
        const double dir = sign(r);
        return cross(u(r, 15, 30), 0.0, dir * u(r, 4, 6), u(r, 0.3, 0.7), c);
      },
      [](const Series& s, const Ctx&) {
        return crosses_road(s, s.y.back() > s.y.front() ? 1 : -1);
      });

  // ---- pedestrians
  add("P_CLR", P, "crossing from left to right",
      [](core::Rng& r, const Ctx& c) { return cross(u(r, 10, 25), 0.0, u(r, 1, 1.8), u(r, 0.3, 0.7), c); },
      [](const Series& s, const Ctx&) { return crosses_road(s, 1); });
  add("P_CRL", P, "crossing from right to left",
      [](core::Rng& r, const Ctx& c) { return cross(u(r, 10, 25), 0.0, -u(r, 1, 1.8), u(r, 0.3, 0.7), c); },
      [](const Series& s, const Ctx&) { return crosses_road(s, -1); });
  add("P_ALL", P, "walking along the left side",
      [](core::Rng& r, const Ctx& c) { return cruise(u(r, 5, 30), u(r, 1, 1.8) - c.ego, -kSidewalk, c.ego); },
      [](const Series& s, const Ctx&) {
        return require(near_const(s.y) && s.y.front() < -kLane && strictly(s.x, -1), "not walking along the left");
      });
  add("P_ALR", P, "walking along the right side",
      [](core::Rng& r, const Ctx& c) { return cruise(u(r, 5, 30), -u(r, 1, 1.8) - c.ego, kSidewalk, c.ego); },
      [](const Series& s, const Ctx&) {
        return require(near_const(s.y) && s.y.front() > kLane && strictly(s.x, -1), "not walking along the right");
      });
  add("P_STD", P, "standing",
      [](core::Rng& r, const Ctx& c) { return cruise(u(r, 5, 30), -c.ego, sign(r) * u(r, 5, 7), c.ego); },
      [](const Series& s, const Ctx& c) {
        return require(all_of(s.vx, [&](double v) { return std::abs(v + c.ego) < 1e-6; }), "not standing");
      });
  add("P_OTH", P, "others (diagonal walking)",
      [](core::Rng& r, const Ctx& c) {
        const double speed = u(r, 1, 1.8), h = sign(r) * u(r, 0.5, 1.0);
        return cross(u(r, 10, 25), speed * std::cos(h), speed * std::sin(h), u(r, 0.3, 0.7), c);
      },
      [](const Series& s, const Ctx&) {
        return require(std::abs(s.d.front()) > 0.4 && std::abs(s.d.front()) < 1.1, "heading not diagonal");
      });

  // ---- riders
  add("R_OFL", R, "overtaking from left",
      [](core::Rng& r, const Ctx& c) {
        const double x0 = u(r, -8, -4), x_end = u(r, 3, 6);
        return cruise(x0, (x_end - x0) / c.T, -2.0, c.ego);
      },
      [](const Series& s, const Ctx&) { return passes(s, -1); });
  add("R_OFR", R, "overtaking from right",
      [](core::Rng& r, const Ctx& c) {
        const double x0 = u(r, -8, -4), x_end = u(r, 3, 6);
        return cruise(x0, (x_end - x0) / c.T, 2.0, c.ego);
      },
      [](const Series& s, const Ctx&) { return passes(s, 1); });
  add("R_USD", R, "riding ahead in the ego lane",
      [](core::Rng& r, const Ctx& c) { return cruise(u(r, 8, 25), u(r, -0.3, 0.3), u(r, -0.3, 0.3), c.ego); },
      [](const Series& s, const Ctx&) { return require(in_lane(s.y, 0) && s.x.front() > 0, "not ahead"); });
  add("R_CLR", R, "crossing from left to right",
      [](core::Rng& r, const Ctx& c) { return cross(u(r, 10, 25), 0.0, u(r, 3, 5), u(r, 0.3, 0.7), c); },
      [](const Series& s, const Ctx&) { return crosses_road(s, 1); });
  add("R_CRL", R, "crossing from right to left",
      [](core::Rng& r, const Ctx& c) { return cross(u(r, 10, 25), 0.0, -u(r, 3, 5), u(r, 0.3, 0.7), c); },
      [](const Series& s, const Ctx&) { return crosses_road(s, -1); });
  add("R_S", R, "stopping",
      [](core::Rng& r, const Ctx& c) {
        const double w0 = u(r, 3, 5), b = w0 / (c.T * u(r, 0.4, 0.6));
        return stop(u(r, 20, 35), u(r, -0.3, 0.3), w0, b, c.ego);
      },
      [](const Series& s, const Ctx& c) {
        return require(std::abs(s.vx.back() + c.ego) < 1e-6, "does not come to a stop");
      });
  add("R_OTH", R, "others (turning)",
      [](core::Rng& r, const Ctx& c) {
        return arc(u(r, 10, 25), sign(r) * u(r, 1, 3), u(r, 3, 5), sign(r) * u(r, 1.0, 1.5), c);
      },
      [](const Series& s, const Ctx&) {
        return require(strictly(s.d, s.d.back() > s.d.front() ? 1 : -1), "heading not turning");
      });
  return t;
}

const std::vector<Template>& table() {
  static const std::vector<Template> t = build_templates();
  return t;
}

std::size_t template_index(const std::string& name) {
  const auto& t = table();
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i].info.name == name) return i;
  throw ConfigError("unknown behavior class '" + name + "'");
}

Ctx context(const SynthSpec& spec) {
  return {double(spec.length - 1) * spec.frame_period, spec.ego_speed, spec.overlap};
}

std::string agent_id(const std::string& name, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return name + "_" + buf;
}

}  // namespace

const std::vector<TemplateInfo>& templates() {
  static const std::vector<TemplateInfo> infos = [] {
    std::vector<TemplateInfo> out;
    for (const auto& t : table()) out.push_back(t.info);
    return out;
  }();
  return infos;
}

const TemplateInfo& find_template(const std::string& name) { return templates()[template_index(name)]; }

void SynthSpec::validate() const {
  if (length < data::kMinTrajectoryLength)
    throw ConfigError("trajectory length must be at least " + std::to_string(data::kMinTrajectoryLength));
  if (!(frame_period > 0) || !std::isfinite(frame_period)) throw ConfigError("frame period must be positive");
  if (!(noise >= 0) || !std::isfinite(noise)) throw ConfigError("noise level must be non-negative");
  if (!(ego_speed > 0) || !std::isfinite(ego_speed)) throw ConfigError("ego speed must be positive");
  std::set<std::string> seen;
  for (const auto& [name, n] : counts) {
    template_index(name);
    if (!seen.insert(name).second) throw ConfigError("class '" + name + "' listed twice");
  }
}

nlohmann::json SynthSpec::to_json() const {
  nlohmann::json c = nlohmann::json::array();
  for (const auto& [name, n] : counts) c.push_back({{"class", name}, {"count", n}});
  return {{"counts", c},       {"length", length},       {"frame_period", frame_period},
          {"noise", noise},    {"ego_speed", ego_speed}, {"overlap", overlap},
          {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    for (const auto& e : j.at("counts"))
      s.counts.emplace_back(e.at("class").get<std::string>(), e.at("count").get<std::size_t>());
    s.length = j.value("length", s.length);
    s.frame_period = j.value("frame_period", s.frame_period);
    s.noise = j.value("noise", s.noise);
    s.ego_speed = j.value("ego_speed", s.ego_speed);
    s.overlap = j.value("overlap", s.overlap);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

data::Trajectory gen_trajectory(const std::string& name, int label, std::size_t index,
                                const SynthSpec& spec) {
  const std::size_t ti = template_index(name);
  const auto& tpl = table()[ti];
  core::Rng rng(core::derive_seed(spec.seed, {ti, index}));
  const Ctx c = context(spec);
  const Motion m = tpl.make(rng, c);

  data::Trajectory tr;
  tr.agent_id = agent_id(name, index);
  tr.kind = tpl.info.kind;
  for (std::size_t k = 0; k < spec.length; ++k) {
    const State s = m(double(k) * spec.frame_period);
    data::TrajectoryPoint p;
    p.x = s.x;
    p.y = s.y;
    p.d = (s.vx == 0 && s.vy == 0) ? 0.0 : std::atan2(s.vy, s.vx);
    if (spec.noise > 0) {
      p.x += core::normal(rng, 0, kNoiseXY * spec.noise);
      p.y += core::normal(rng, 0, kNoiseXY * spec.noise);
      p.z = core::normal(rng, 0, kNoiseZ * spec.noise);
      p.d += core::normal(rng, 0, kNoiseD * spec.noise);
    }
    p.d = data::wrap_angle(p.d);
    p.label = label;
    p.frame = std::int64_t(k);
    tr.points.push_back(p);
  }
  return tr;
}

SynthDataset gen_dataset(const SynthSpec& spec) {
  spec.validate();
  SynthDataset out;
  std::vector<std::string> names;
  for (const auto& [name, n] : spec.counts) names.push_back(name);
  out.labels = data::LabelMap(names);
  for (std::size_t c = 0; c < spec.counts.size(); ++c) {
    const auto& [name, n] = spec.counts[c];
    for (std::size_t k = 0; k < n; ++k) out.trajectories.push_back(gen_trajectory(name, int(c), k, spec));
  }
  std::sort(out.trajectories.begin(), out.trajectories.end(),
            [](const auto& a, const auto& b) { return a.agent_id < b.agent_id; });
  return out;
}

std::vector<TemplateCheck> verify_templates(const SynthSpec& spec) {
  spec.validate();
  SynthSpec clean = spec;
  clean.noise = 0;
  std::vector<std::string> names;
  if (spec.counts.empty()) {
    for (const auto& t : table()) names.push_back(t.info.name);
  } else {
    for (const auto& [name, n] : spec.counts) names.push_back(name);
  }
  constexpr std::size_t kDraws = 25;
  const Ctx c = context(clean);
  std::vector<TemplateCheck> out;
  for (const auto& name : names) {
    const auto& tpl = table()[template_index(name)];
    TemplateCheck check{name, true, ""};
    for (std::size_t k = 0; k < kDraws && check.passed; ++k) {
      const auto tr = gen_trajectory(name, 0, k, clean);
      const std::string why = tpl.check(series(tr, clean.frame_period), c);
      if (!why.empty()) {
        check.passed = false;
        check.detail = tr.agent_id + ": " + why;
      }
    }
    out.push_back(std::move(check));
  }
  return out;
}

}  // namespace dbr::synth
