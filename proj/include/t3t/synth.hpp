#pragma once

// Deterministic synthetic VideoQA tasks generated directly in feature space.
//
//   trend: f_n = a + delta_n * drift * u_c + noise. The answer is the drift
//          direction c; interior frames add nothing beyond the endpoints.
//   event: f_n = a + noise + mu * decay^(n - t) * 1_g for n >= t. The answer
//          is the channel group g that jumped at interior frame t; the jump
//          has died out before the last frame.
//   mixed: each sample is a trend or an event question, chosen by the
//          question tokens, answered over the union of both candidate sets.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "t3t/config.hpp"
#include "t3t/temporal.hpp"

namespace t3t {

namespace vocab {
inline constexpr std::size_t pad = 0;
inline constexpr std::size_t query = 1;
inline constexpr std::size_t trend = 2;
inline constexpr std::size_t event = 3;
inline constexpr std::size_t direction = 4;
inline constexpr std::size_t which = 5;
inline constexpr std::size_t group = 6;
inline constexpr std::size_t end = 7;
inline constexpr std::size_t first_trend_class = 8;
inline constexpr std::size_t first_event_class = 16;
inline constexpr std::size_t size = 32;
}  // namespace vocab

struct Sample {
  FrameFeatures frames;
  std::vector<std::size_t> question_ids;
  std::vector<std::size_t> candidate_ids;
  std::size_t gold = 0;  // 0-based position in candidate_ids
  TaskKind kind = TaskKind::trend;
  std::size_t label = 0;  // class within its kind (direction or channel group)
  std::size_t onset = 0;  // 0-based jump frame of an event sample, 0 for trend

  bool operator==(const Sample& o) const {
    return frames.values == o.frames.values && question_ids == o.question_ids && candidate_ids == o.candidate_ids &&
           gold == o.gold && kind == o.kind && label == o.label && onset == o.onset;
  }
};

struct Dataset {
  TaskSpec spec;
  std::vector<Sample> train, val, test;
};

enum class Split : std::uint64_t { train = 0, val = 1, test = 2 };

inline std::vector<std::size_t> question_template(TaskKind kind, std::size_t length) {
  const std::array<std::size_t, 4> trend{vocab::query, vocab::trend, vocab::direction, vocab::end};
  const std::array<std::size_t, 4> event{vocab::query, vocab::event, vocab::which, vocab::group};
  const auto& t = kind == TaskKind::event ? event : trend;
  std::vector<std::size_t> ids(length, vocab::pad);
  std::copy_n(t.begin(), std::min(length, t.size()), ids.begin());
  return ids;
}

inline std::size_t class_token(TaskKind kind, std::size_t label) {
  return (kind == TaskKind::event ? vocab::first_event_class : vocab::first_trend_class) + label;
}

// Channel range [begin, end) of event group g.
inline std::pair<std::size_t, std::size_t> channel_group(std::size_t g, std::size_t groups, std::size_t d) {
  const std::size_t width = d / groups;
  const std::size_t begin = g * width;
  return {begin, g + 1 == groups ? d : begin + width};
}

namespace detail {

inline std::mt19937_64 split_rng(const TaskSpec& spec, Split split) {
  std::seed_seq seq{static_cast<std::uint64_t>(spec.seed), static_cast<std::uint64_t>(split),
                    static_cast<std::uint64_t>(spec.kind), std::uint64_t{0x7433}};
  return std::mt19937_64(seq);
}

inline Tensor trend_frames(const TaskSpec& spec, std::size_t label, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double angle = 2.0 * std::acos(-1.0) * static_cast<double>(label) / static_cast<double>(spec.trend_classes);
  std::vector<double> dir(spec.D, 0.0);
  dir[0] = std::cos(angle);
  dir[1] = spec.trend_classes == 2 ? 0.0 : std::sin(angle);
  std::vector<double> start(spec.D);
  for (auto& v : start) v = spec.start_spread * gauss(rng);
  const auto steps = uniform_time_steps(spec.N);
  Tensor f({spec.N, spec.D});
  for (std::size_t n = 0; n < spec.N; ++n)
    for (std::size_t c = 0; c < spec.D; ++c)
      f.at(n, c) = start[c] + steps.delta[n] * spec.drift * dir[c] + spec.sigma * gauss(rng);
  return f;
}

inline Tensor event_frames(const TaskSpec& spec, std::size_t label, std::mt19937_64& rng, std::size_t& onset) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> when(1, spec.N - 4);
  std::vector<double> base(spec.D);
  for (auto& v : base) v = spec.start_spread * gauss(rng);
  const std::size_t t = when(rng);
  onset = t;
  const auto [lo, hi] = channel_group(label, spec.event_classes, spec.D);
  Tensor f({spec.N, spec.D});
  for (std::size_t n = 0; n < spec.N; ++n) {
    const double bump = n >= t ? spec.mu * std::pow(spec.decay, static_cast<double>(n - t)) : 0.0;
    for (std::size_t c = 0; c < spec.D; ++c)
      f.at(n, c) = base[c] + spec.sigma * gauss(rng) + (c >= lo && c < hi ? bump : 0.0);
  }
  return f;
}

inline Sample make_sample(const TaskSpec& spec, TaskKind kind, std::size_t label, std::size_t gold,
                          std::mt19937_64& rng) {
  Sample s;
  s.kind = kind;
  s.label = label;
  s.frames = FrameFeatures(kind == TaskKind::trend ? trend_frames(spec, label, rng)
                                                   : event_frames(spec, label, rng, s.onset));
  s.question_ids = question_template(kind, spec.L);

  std::vector<std::size_t> others;
  if (spec.kind != TaskKind::event)
    for (std::size_t c = 0; c < spec.trend_classes; ++c) others.push_back(class_token(TaskKind::trend, c));
  if (spec.kind != TaskKind::trend)
    for (std::size_t c = 0; c < spec.event_classes; ++c) others.push_back(class_token(TaskKind::event, c));
  const std::size_t answer = class_token(kind, label);
  std::erase(others, answer);
  std::shuffle(others.begin(), others.end(), rng);
  others.insert(others.begin() + static_cast<std::ptrdiff_t>(gold), answer);
  s.candidate_ids = std::move(others);
  s.gold = gold;
  return s;
}

}  // namespace detail

// Samples of one split. Labels and gold positions are balanced by
// construction, then the order is shuffled.
inline std::vector<Sample> generate_split(const TaskSpec& spec, Split split, std::size_t count) {
  spec.validate();
  auto rng = detail::split_rng(spec, split);
  const std::size_t m = spec.M();

  struct Plan {
    TaskKind kind;
    std::size_t label, gold;
  };
  std::vector<Plan> plan;
  plan.reserve(count);
  std::size_t trend_seen = 0, event_seen = 0;
  for (std::size_t i = 0; i < count; ++i) {
    TaskKind kind = spec.kind;
    if (spec.kind == TaskKind::mixed) {
      // Bresenham-style interleave hits trend_fraction exactly over any prefix.
      const double want = spec.trend_fraction * static_cast<double>(i + 1);
      kind = static_cast<double>(trend_seen) + 0.5 <= want ? TaskKind::trend : TaskKind::event;
    }
    const std::size_t classes = kind == TaskKind::trend ? spec.trend_classes : spec.event_classes;
    std::size_t& seen = kind == TaskKind::trend ? trend_seen : event_seen;
    plan.push_back({kind, seen % classes, (seen / classes) % m});
    ++seen;
  }
  std::shuffle(plan.begin(), plan.end(), rng);

  std::vector<Sample> out;
  out.reserve(count);
  for (const auto& p : plan) out.push_back(detail::make_sample(spec, p.kind, p.label, p.gold, rng));
  return out;
}

inline std::vector<Sample> gen_trend(TaskSpec spec, Split split, std::size_t count) {
  if (spec.kind != TaskKind::trend) throw ConfigError("gen_trend: task kind must be trend");
  return generate_split(spec, split, count);
}

inline std::vector<Sample> gen_event(TaskSpec spec, Split split, std::size_t count) {
  if (spec.kind != TaskKind::event) throw ConfigError("gen_event: task kind must be event");
  return generate_split(spec, split, count);
}

inline std::vector<Sample> gen_mixed(TaskSpec spec, Split split, std::size_t count) {
  if (spec.kind != TaskKind::mixed) throw ConfigError("gen_mixed: task kind must be mixed");
  return generate_split(spec, split, count);
}

inline Dataset generate(const TaskSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.train = generate_split(spec, Split::train, spec.n_train);
  ds.val = generate_split(spec, Split::val, spec.n_val);
  ds.test = generate_split(spec, Split::test, spec.n_test);
  return ds;
}

}  // namespace t3t
