#pragma once

// Synthetic three-stage curriculum at toy scale:
//   stage 1  shape classification    "what object ?"        -> <class>
//   stage 2  shape captioning        "describe ?"           -> <class> <color>
//   stage 3  two-object spatial QA   "which is <relation> ?" -> <class>
// Stage 3 draws a configurable fraction of its samples from the stage-2 pool.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptk/error.hpp"
#include "ptk/model.hpp"
#include "ptk/point_cloud.hpp"
#include "ptk/tokenizer.hpp"

namespace ptk::curriculum {

enum class ShapeClass : std::uint8_t { Sphere, Cube, Cylinder, Cone, Torus, Plane, Line, LBracket };
inline constexpr std::size_t kNumShapeClasses = 8;

inline std::string_view to_string(ShapeClass c) {
  static constexpr std::array<std::string_view, kNumShapeClasses> names{
      "sphere", "cube", "cylinder", "cone", "torus", "plane", "line", "bracket"};
  return names[static_cast<std::size_t>(c)];
}

enum class Relation : std::uint8_t { LeftOf, RightOf, Above, Below, InFront, Behind, Nearer, Farther };
inline constexpr std::size_t kNumRelations = 8;

inline std::string_view to_string(Relation r) {
  static constexpr std::array<std::string_view, kNumRelations> names{
      "left-of", "right-of", "above", "below", "in-front", "behind", "nearer", "farther"};
  return names[static_cast<std::size_t>(r)];
}

// Which comparison a stage-3 question asks for.
enum class QuestionFamily : std::uint8_t { Horizontal, Depth, Vertical, Distance };
inline constexpr std::size_t kNumQuestionFamilies = 4;

inline constexpr std::array<Vec3, 6> kPalette{{
    {0.9, 0.1, 0.1}, {0.1, 0.8, 0.2}, {0.1, 0.2, 0.9}, {0.9, 0.9, 0.1}, {0.1, 0.9, 0.9}, {0.9, 0.1, 0.9}}};
inline constexpr std::array<std::string_view, 6> kColorNames{"red", "green", "blue", "yellow", "cyan", "magenta"};

// Toy text vocabulary layered above the reserved special ids.
namespace vocab {
inline constexpr std::uint32_t kClassBase = model::kFirstTextId;                       // 8 ids
inline constexpr std::uint32_t kColorBase = kClassBase + kNumShapeClasses;             // 6 ids
inline constexpr std::uint32_t kRelationBase = kColorBase + kPalette.size();           // 8 ids
inline constexpr std::uint32_t kWhat = kRelationBase + kNumRelations;
inline constexpr std::uint32_t kObject = kWhat + 1;
inline constexpr std::uint32_t kDescribe = kWhat + 2;
inline constexpr std::uint32_t kSize = kWhat + 3;

inline std::uint32_t of(ShapeClass c) { return kClassBase + static_cast<std::uint32_t>(c); }
inline std::uint32_t of(Relation r) { return kRelationBase + static_cast<std::uint32_t>(r); }
inline std::uint32_t color(std::size_t palette_index) { return kColorBase + static_cast<std::uint32_t>(palette_index); }
}  // namespace vocab

struct ShapeSpec {
  ShapeClass shape = ShapeClass::Sphere;
  std::size_t n_points = 256;
  // Std-dev of isotropic Gaussian noise; each offset is capped at 3*jitter.
  double jitter = 0.0;
  std::uint64_t seed = 0;
  Vec3 scale{1.0, 1.0, 1.0};
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 rgb{0.5, 0.5, 0.5};
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
}

// A point on the unit-extent ideal surface of `shape`, centered at origin.
inline Vec3 surface_point(ShapeClass shape, std::mt19937_64& rng) {
  constexpr double pi = std::numbers::pi;
  auto u = [&](double lo, double hi) { return uniform(rng, lo, hi); };
  switch (shape) {
    case ShapeClass::Sphere: {
      std::normal_distribution<double> n(0.0, 1.0);
      Vec3 v{n(rng), n(rng), n(rng)};
      double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      if (len == 0.0) return {0.5, 0.0, 0.0};
      return {0.5 * v[0] / len, 0.5 * v[1] / len, 0.5 * v[2] / len};
    }
    case ShapeClass::Cube: {
      const int face = static_cast<int>(rng() % 6);
      const double a = u(-0.5, 0.5), b = u(-0.5, 0.5), s = (face % 2) ? 0.5 : -0.5;
      if (face < 2) return {s, a, b};
      if (face < 4) return {a, s, b};
      return {a, b, s};
    }
    case ShapeClass::Cylinder: {
      // lateral area pi, caps pi/2 in total
      const double pick = u(0.0, 1.5);
      const double theta = u(0.0, 2.0 * pi);
      if (pick < 1.0) return {0.5 * std::cos(theta), 0.5 * std::sin(theta), u(-0.5, 0.5)};
      const double r = 0.5 * std::sqrt(u(0.0, 1.0));
      return {r * std::cos(theta), r * std::sin(theta), pick < 1.25 ? -0.5 : 0.5};
    }
    case ShapeClass::Cone: {
      const double slant = std::sqrt(0.25 + 1.0);
      const double lateral = pi * 0.5 * slant, base = pi * 0.25;
      const double theta = u(0.0, 2.0 * pi);
      if (u(0.0, lateral + base) < lateral) {
        const double f = std::sqrt(u(0.0, 1.0));  // fraction of the way from apex to rim
        return {0.5 * f * std::cos(theta), 0.5 * f * std::sin(theta), 0.5 - f};
      }
      const double r = 0.5 * std::sqrt(u(0.0, 1.0));
      return {r * std::cos(theta), r * std::sin(theta), -0.5};
    }
    case ShapeClass::Torus: {
      constexpr double R = 0.35, r = 0.15;
      for (;;) {
        const double a = u(0.0, 2.0 * pi), b = u(0.0, 2.0 * pi);
        if (u(0.0, R + r) <= R + r * std::cos(b)) {
          return {(R + r * std::cos(b)) * std::cos(a), (R + r * std::cos(b)) * std::sin(a), r * std::sin(b)};
        }
      }
    }
    case ShapeClass::Plane:
      return {u(-0.5, 0.5), u(-0.5, 0.5), 0.0};
    case ShapeClass::Line:
      return {u(-0.5, 0.5), 0.0, 0.0};
    case ShapeClass::LBracket: {
      const double a = u(-0.5, 0.5), w = u(-0.2, 0.2);
      if (rng() % 2) return {a, w, -0.5};
      return {-0.5, w, a};
    }
  }
  return {0.0, 0.0, 0.0};
}

}  // namespace detail

// Samples `n_points` from the ideal surface, applies per-axis scale, then
// translation, then capped isotropic jitter. Deterministic per seed.
inline PointCloud gen_shape(const ShapeSpec& spec) {
  if (spec.n_points < 8) throw Error(ErrorKind::InvalidArgument, "shapes need at least 8 points");
  if (!(spec.jitter >= 0.0)) throw Error(ErrorKind::InvalidArgument, "jitter must be >= 0");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  PointCloud cloud;
  cloud.source_id = std::string(to_string(spec.shape)) + "#" + std::to_string(spec.seed);
  cloud.points.reserve(spec.n_points);
  for (std::size_t i = 0; i < spec.n_points; ++i) {
    Vec3 s = detail::surface_point(spec.shape, rng);
    Point p;
    for (std::size_t a = 0; a < 3; ++a) p.pos[a] = s[a] * spec.scale[a] + spec.center[a];
    if (spec.jitter > 0.0) {
      Vec3 n{noise(rng), noise(rng), noise(rng)};
      double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
      double k = len > 3.0 ? 3.0 / len : 1.0;
      for (std::size_t a = 0; a < 3; ++a) p.pos[a] += spec.jitter * k * n[a];
    }
    p.rgb = spec.rgb;
    cloud.points.push_back(p);
  }
  return cloud;
}

inline Vec3 centroid(std::span<const Point> pts) {
  Vec3 c{0.0, 0.0, 0.0};
  for (const auto& p : pts)
    for (std::size_t a = 0; a < 3; ++a) c[a] += p.pos[a];
  for (auto& v : c) v /= static_cast<double>(pts.size());
  return c;
}

// Relation of A to B for `family`, from centroids in normalized scene
// coordinates. Distance is measured from the scene origin corner.
inline Relation relation_of(QuestionFamily family, const Vec3& a, const Vec3& b) {
  switch (family) {
    case QuestionFamily::Horizontal: return a[kX] < b[kX] ? Relation::LeftOf : Relation::RightOf;
    case QuestionFamily::Depth: return a[kY] < b[kY] ? Relation::InFront : Relation::Behind;
    case QuestionFamily::Vertical: return a[kZ] > b[kZ] ? Relation::Above : Relation::Below;
    case QuestionFamily::Distance: {
      auto norm2 = [](const Vec3& v) { return v[0] * v[0] + v[1] * v[1] + v[2] * v[2]; };
      return norm2(a) < norm2(b) ? Relation::Nearer : Relation::Farther;
    }
  }
  return Relation::LeftOf;
}

// The other answer of the same family (left-of <-> right-of, ...).
inline Relation opposite(Relation r) { return static_cast<Relation>(static_cast<int>(r) ^ 1); }

// Gap between A and B along the queried quantity.
inline double relation_margin(QuestionFamily family, const Vec3& a, const Vec3& b) {
  switch (family) {
    case QuestionFamily::Horizontal: return std::abs(a[kX] - b[kX]);
    case QuestionFamily::Depth: return std::abs(a[kY] - b[kY]);
    case QuestionFamily::Vertical: return std::abs(a[kZ] - b[kZ]);
    case QuestionFamily::Distance: {
      auto norm = [](const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); };
      return std::abs(norm(a) - norm(b));
    }
  }
  return 0.0;
}

struct SceneSample {
  PointCloud cloud;  // normalized; the first `a_points` points are object A
  ShapeSpec a, b;
  std::size_t a_points = 0;
  QuestionFamily family = QuestionFamily::Horizontal;
  Relation relation = Relation::LeftOf;  // A relative to B
  Relation asked = Relation::LeftOf;     // "which object is <asked>?"
  ShapeClass answer_class = ShapeClass::Sphere;
  std::vector<std::uint32_t> question;
  std::vector<std::uint32_t> answer;
};

inline bool boxes_disjoint(const AxisBounds& a, const AxisBounds& b) {
  for (std::size_t ax = 0; ax < 3; ++ax) {
    if (a.max[ax] < b.min[ax] || b.max[ax] < a.min[ax]) return true;
  }
  return false;
}

inline constexpr double kSceneMargin = 0.1;

// Two objects of different classes at disjoint positions. Placements are
// redrawn until the boxes are disjoint and the queried gap is at least
// kSceneMargin after normalization. The question names one relation of the
// family; the answer is the class of the object it picks out.
inline SceneSample gen_scene(std::uint64_t seed, std::size_t points_per_object, double jitter) {
  std::mt19937_64 rng(seed);
  auto u = [&](double lo, double hi) { return detail::uniform(rng, lo, hi); };
  for (;;) {
    SceneSample s;
    s.family = static_cast<QuestionFamily>(rng() % kNumQuestionFamilies);
    const auto ca = static_cast<ShapeClass>(rng() % kNumShapeClasses);
    auto cb = static_cast<ShapeClass>(rng() % (kNumShapeClasses - 1));
    if (cb >= ca) cb = static_cast<ShapeClass>(static_cast<int>(cb) + 1);
    auto make = [&](ShapeClass c) {
      ShapeSpec sp;
      sp.shape = c;
      sp.n_points = points_per_object;
      sp.jitter = jitter;
      sp.seed = rng();
      const double size = u(0.25, 0.4);
      sp.scale = {size * u(0.8, 1.2), size * u(0.8, 1.2), size * u(0.8, 1.2)};
      sp.center = {u(0.2, 0.8), u(0.2, 0.8), u(0.2, 0.8)};
      sp.rgb = kPalette[rng() % kPalette.size()];
      return sp;
    };
    s.a = make(ca);
    s.b = make(cb);
    auto pa = gen_shape(s.a);
    auto pb = gen_shape(s.b);
    if (!boxes_disjoint(compute_bounds(pa), compute_bounds(pb))) continue;
    PointCloud scene;
    scene.source_id = "scene#" + std::to_string(seed);
    scene.points = pa.points;
    scene.points.insert(scene.points.end(), pb.points.begin(), pb.points.end());
    s.cloud = normalize(scene);
    s.a_points = pa.size();
    std::span<const Point> all(s.cloud.points);
    const Vec3 a_c = centroid(all.first(s.a_points));
    const Vec3 b_c = centroid(all.subspan(s.a_points));
    if (relation_margin(s.family, a_c, b_c) < kSceneMargin) continue;
    s.relation = relation_of(s.family, a_c, b_c);
    s.asked = (rng() & 1) ? s.relation : opposite(s.relation);
    s.answer_class = s.asked == s.relation ? ca : cb;
    s.question = {vocab::of(s.asked)};
    s.answer = {vocab::of(s.answer_class)};
    return s;
  }
}

// ---------------------------------------------------------------------------
// Stage driver

struct CurriculumConfig {
  model::ModelConfig model;
  // Scenes arrive normalized and single objects sit in the unit frame, so
  // the tokenizer does not rescale.
  TokenizerConfig tokenizer{.m = 8, .k = 3, .normalize_input = false};
  // Range of the nominal object size for stage 1/2 samples.
  std::array<double, 2> object_size{0.3, 0.7};
  std::size_t object_points = 192;
  std::size_t scene_points_per_object = 96;
  double jitter = 0.01;
  std::size_t train_pool = 512;
  std::size_t eval_pool = 256;
  // Scene QA needs far more distinct layouts than the object stages.
  std::size_t scene_train_pool = 4096;
  std::uint64_t data_seed = 7;
  std::size_t batch_size = 8;
  double lr = 3e-3;
  double scene_lr = 1e-3;
  std::size_t log_every = 10;
  // Scene questions precede the point cloud so patch positions can attend
  // to the relation being asked about.
  bool question_first = true;
};

struct StagePlan {
  int stage = 1;
  std::size_t steps = 0;
  // Fraction of samples drawn from the stage-2 pool (stage 3 only).
  double mix_fraction = 0.0;
  double lr = 3e-3;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

struct MetricRecord {
  int stage = 0;
  std::size_t step = 0;
  std::string metric;
  double value = 0.0;
};

// `stage,step,metric,value` lines.
inline std::string format_metrics(std::span<const MetricRecord> records) {
  std::string out = "stage,step,metric,value\n";
  for (const auto& r : records) {
    out += std::to_string(r.stage) + ',' + std::to_string(r.step) + ',' + r.metric + ',';
    io::append_double(out, r.value);
    out += '\n';
  }
  return out;
}

// Bernoulli draw with probability `fraction` from the trainer's RNG.
inline bool draw_secondary(std::mt19937_64& rng, double fraction) {
  return std::generate_canonical<double, 53>(rng) < fraction;
}

struct StageResult {
  model::ModelParams params;
  std::vector<MetricRecord> metrics;
};

class Curriculum {
 public:
  explicit Curriculum(CurriculumConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.model.m = cfg_.tokenizer.m;
    build_object_stage(1, cfg_.data_seed * 1000003 + 1);
    build_object_stage(2, cfg_.data_seed * 1000003 + 2);
    build_scene_stage(cfg_.data_seed * 1000003 + 3);
    std::size_t longest = 0;
    for (const auto* pool : {&train_[0], &train_[1], &train_[2], &eval_[0], &eval_[1], &eval_[2]})
      for (const auto& ex : *pool) longest = std::max(longest, ex.seq.tokens.size());
    if (longest > cfg_.model.max_seq) {
      throw Error(ErrorKind::ShapeMismatch, "curriculum sequences reach " + std::to_string(longest) +
                                                " tokens, above max_seq " + std::to_string(cfg_.model.max_seq));
    }
  }

  const CurriculumConfig& config() const { return cfg_; }
  const std::vector<model::Example>& train_set(int stage) const { return train_.at(index(stage)); }
  const std::vector<model::Example>& eval_set(int stage) const { return eval_.at(index(stage)); }
  // At most 512 training examples, used for the train-side metric.
  std::span<const model::Example> train_sample(int stage) const {
    std::span<const model::Example> all = train_set(stage);
    return all.first(std::min<std::size_t>(all.size(), 512));
  }
  const std::vector<SceneSample>& scenes() const { return scenes_; }

  model::ModelParams init() const { return model::init_params(cfg_.model); }

  StagePlan plan(int stage, std::size_t steps) const {
    index(stage);
    StagePlan p;
    p.stage = stage;
    p.steps = steps;
    p.mix_fraction = stage == 3 ? 0.3 : 0.0;
    p.lr = stage == 3 ? cfg_.scene_lr : cfg_.lr;
    p.batch_size = cfg_.batch_size;
    p.seed = cfg_.data_seed * 7919 + static_cast<std::uint64_t>(stage);
    return p;
  }

  model::SampleSource source(const StagePlan& plan) const {
    const auto* primary = &train_set(plan.stage);
    const auto* secondary = &train_set(2);
    const double f = plan.mix_fraction;
    return [primary, secondary, f](std::mt19937_64& rng) -> const model::Example& {
      const auto* pool = (f > 0.0 && draw_secondary(rng, f)) ? secondary : primary;
      return (*pool)[rng() % pool->size()];
    };
  }

  StageResult run_stage(model::ModelParams params, const StagePlan& plan) const {
    index(plan.stage);
    if (plan.mix_fraction < 0.0 || plan.mix_fraction > 1.0) {
      throw Error(ErrorKind::InvalidArgument, "mix fraction must lie in [0,1]");
    }
    StageResult res;
    if (plan.steps == 0) {
      res.params = std::move(params);
      return res;
    }
    model::TrainOptions opt;
    opt.steps = plan.steps;
    opt.batch_size = plan.batch_size;
    opt.lr = plan.lr;
    opt.seed = plan.seed;
    auto on_step = [&](std::size_t step, double l) {
      if (step % cfg_.log_every == 0 || step + 1 == plan.steps) res.metrics.push_back({plan.stage, step, "loss", l});
    };
    auto trained = model::train(std::move(params), source(plan), opt, on_step);
    res.params = std::move(trained.params);
    const char* name = plan.stage == 1 ? "accuracy" : "exact_match";
    res.metrics.push_back({plan.stage, plan.steps, std::string("train_") + name,
                           model::exact_match_rate(res.params, train_sample(plan.stage))});
    res.metrics.push_back({plan.stage, plan.steps, std::string("eval_") + name,
                           model::exact_match_rate(res.params, eval_set(plan.stage))});
    return res;
  }

  // Runs `stages` in the given order with `steps` each.
  StageResult run(model::ModelParams params, std::span<const int> stages, std::size_t steps) const {
    std::vector<std::size_t> per(stages.size(), steps);
    return run(std::move(params), stages, per);
  }

  StageResult run(model::ModelParams params, std::span<const int> stages, std::span<const std::size_t> steps) const {
    if (steps.size() != stages.size()) throw Error(ErrorKind::InvalidArgument, "one step count per stage");
    StageResult all;
    all.params = std::move(params);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      auto r = run_stage(std::move(all.params), plan(stages[i], steps[i]));
      all.params = std::move(r.params);
      all.metrics.insert(all.metrics.end(), r.metrics.begin(), r.metrics.end());
    }
    return all;
  }

  static std::optional<double> find_metric(std::span<const MetricRecord> records, int stage, std::string_view name) {
    std::optional<double> v;
    for (const auto& r : records)
      if (r.stage == stage && r.metric == name) v = r.value;
    return v;
  }

 private:
  static std::size_t index(int stage) {
    if (stage < 1 || stage > 3) throw Error(ErrorKind::InvalidArgument, "stage must be 1, 2 or 3");
    return static_cast<std::size_t>(stage - 1);
  }

  model::Example to_example(const PointCloud& cloud, std::span<const std::uint32_t> prompt,
                            std::span<const std::uint32_t> answer, bool prompt_first = false) const {
    TokenSequence seq = tokenize(cloud, cfg_.tokenizer).sequence;
    if (prompt_first) {
      std::vector<Token> head;
      for (auto id : prompt) head.push_back(Token::text(id));
      seq.tokens.insert(seq.tokens.begin(), head.begin(), head.end());
    } else {
      for (auto id : prompt) seq.tokens.push_back(Token::text(id));
    }
    const std::size_t answer_start = seq.tokens.size();
    for (auto id : answer) seq.tokens.push_back(Token::text(id));
    return model::make_example(std::move(seq), answer_start);
  }

  // Single object at scene scale inside the unit frame, so stage 1/2 patches
  // look like the patches of objects inside normalized scenes.
  ShapeSpec random_object(std::mt19937_64& rng, std::size_t& color_index) const {
    auto u = [&](double lo, double hi) { return detail::uniform(rng, lo, hi); };
    ShapeSpec sp;
    sp.shape = static_cast<ShapeClass>(rng() % kNumShapeClasses);
    sp.n_points = cfg_.object_points;
    sp.jitter = cfg_.jitter;
    sp.seed = rng();
    const double size = u(cfg_.object_size[0], cfg_.object_size[1]);
    for (std::size_t a = 0; a < 3; ++a) {
      sp.scale[a] = size * u(0.8, 1.2);
      const double half = 0.5 * sp.scale[a] + 3.0 * cfg_.jitter;
      sp.center[a] = u(half, 1.0 - half);
    }
    color_index = rng() % kPalette.size();
    sp.rgb = kPalette[color_index];
    return sp;
  }

  void build_object_stage(int stage, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < cfg_.train_pool + cfg_.eval_pool; ++i) {
      std::size_t color = 0;
      auto sp = random_object(rng, color);
      auto cloud = gen_shape(sp);
      model::Example ex;
      if (stage == 1) {
        const std::array<std::uint32_t, 2> prompt{vocab::kWhat, vocab::kObject};
        const std::array<std::uint32_t, 1> answer{vocab::of(sp.shape)};
        ex = to_example(cloud, prompt, answer);
      } else {
        const std::array<std::uint32_t, 1> prompt{vocab::kDescribe};
        const std::array<std::uint32_t, 2> answer{vocab::of(sp.shape), vocab::color(color)};
        ex = to_example(cloud, prompt, answer);
      }
      (i < cfg_.train_pool ? train_ : eval_)[index(stage)].push_back(std::move(ex));
    }
  }

  void build_scene_stage(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < cfg_.scene_train_pool + cfg_.eval_pool; ++i) {
      auto s = gen_scene(rng(), cfg_.scene_points_per_object, cfg_.jitter);
      (i < cfg_.scene_train_pool ? train_ : eval_)[2].push_back(to_example(s.cloud, s.question, s.answer, cfg_.question_first));
      scenes_.push_back(std::move(s));
    }
  }

  CurriculumConfig cfg_;
  std::array<std::vector<model::Example>, 3> train_;
  std::array<std::vector<model::Example>, 3> eval_;
  std::vector<SceneSample> scenes_;
};

// ---------------------------------------------------------------------------
// Tokenization ablation

struct TokenizationVariant {
  Ordering ordering = Ordering::Zyx;
  bool separators = true;

  std::string label() const {
    std::string s(ptk::to_string(ordering));
    if (ordering == Ordering::Zyx && !separators) s += "-nosep";
    return s;
  }
};

struct AblationRow {
  std::string label;
  double stage3_exact_match = 0.0;
  double stage3_train_exact_match = 0.0;
  double final_loss = 0.0;
  double mean_tokens = 0.0;
};

// Fixed-column table, one row per variant.
inline std::string format_ablation(std::span<const AblationRow> rows) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-14s %12s %12s %10s %8s\n", "strategy", "s3_eval_em", "s3_train_em",
                "final_loss", "tokens");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-14s %12.4f %12.4f %10.4f %8.2f\n", r.label.c_str(), r.stage3_exact_match,
                  r.stage3_train_exact_match, r.final_loss, r.mean_tokens);
    out += buf;
  }
  return out;
}

// Trains an identically initialized model through stages 1 -> 2 -> 3 for
// each variant on the same underlying clouds and reports stage-3 scores.
inline std::vector<AblationRow> ablate_tokenization(std::span<const TokenizationVariant> variants,
                                                    std::size_t steps_per_stage, CurriculumConfig base) {
  if (variants.size() < 2) throw Error(ErrorKind::InvalidArgument, "ablation needs at least two strategies");
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    CurriculumConfig cfg = base;
    cfg.tokenizer.ordering = v.ordering;
    cfg.tokenizer.separators = v.separators;
    Curriculum cur(cfg);
    const std::array<int, 3> stages{1, 2, 3};
    auto res = cur.run(cur.init(), stages, steps_per_stage);
    AblationRow row;
    row.label = v.label();
    row.stage3_exact_match = Curriculum::find_metric(res.metrics, 3, "eval_exact_match").value_or(0.0);
    row.stage3_train_exact_match = Curriculum::find_metric(res.metrics, 3, "train_exact_match").value_or(0.0);
    row.final_loss = Curriculum::find_metric(res.metrics, 3, "loss").value_or(0.0);
    double tokens = 0.0;
    for (const auto& ex : cur.eval_set(3)) tokens += static_cast<double>(ex.seq.tokens.size());
    row.mean_tokens = tokens / static_cast<double>(std::max<std::size_t>(1, cur.eval_set(3).size()));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ptk::curriculum
