// ptk: tokenize point clouds, inspect token files, run the toy curriculum.
//
// Exit codes: 0 ok, 1 usage, 2 parse error, 3 I/O error, 4 invalid grammar,
// 5 training diverged, 6 verification failed.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ptk/ptk.hpp"

namespace fs = std::filesystem;
using namespace ptk;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kParse = 2, kIo = 3, kInvalid = 4, kDiverged = 5, kVerifyFailed = 6 };

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Parse:
    case ErrorKind::UnsupportedFormat:
    case ErrorKind::EmptyCloud: return kParse;
    case ErrorKind::Io: return kIo;
    case ErrorKind::DivergenceDetected: return kDiverged;
    case ErrorKind::GradMismatch: return kVerifyFailed;
    default: return kUsage;
  }
}

void kv(std::ostream& os, std::string_view key, const auto& value) { os << key << '=' << value << '\n'; }

std::string format_double(double v) {
  std::string s;
  io::append_double(s, v);
  return s;
}

struct TokenizeArgs {
  std::string input;
  std::string output;
  std::size_t m = 512;
  std::size_t k = 5;
  std::string strategy = "zyx";
  bool no_separators = false;
  bool global_counts = false;
  std::size_t fps_samples = 0;
};

Ordering ordering_arg(const std::string& s) {
  auto o = parse_ordering(s);
  if (!o) throw Error(ErrorKind::InvalidArgument, "unknown strategy: " + s);
  return *o;
}

TokenizerConfig tokenizer_config(const TokenizeArgs& a) {
  TokenizerConfig c;
  c.m = a.m;
  c.k = a.k;
  c.ordering = ordering_arg(a.strategy);
  c.separators = !a.no_separators;
  c.fps_samples = a.fps_samples;
  c.partition.global_counts = a.global_counts;
  return c;
}

// Tokenizes one file; returns the summary text.
std::string tokenize_one(const fs::path& in, const fs::path& out, const TokenizerConfig& cfg) {
  auto cloud = load_point_cloud(in);
  auto res = tokenize(cloud, cfg);
  export_sequence(res.sequence, out);
  const auto& seq = res.sequence;
  std::ostringstream os;
  kv(os, "input", in.string());
  kv(os, "output", out.string());
  kv(os, "points", res.n_points);
  kv(os, "patches", seq.count(TokenKind::PointPatch));
  kv(os, "patch_dim", seq.patch_matrix.cols);
  kv(os, "layer_seps", seq.count(TokenKind::LayerSep));
  kv(os, "row_seps", seq.count(TokenKind::RowSep));
  kv(os, "ordering", to_string(seq.ordering));
  kv(os, "plan", describe_plan(res.grid.plan));
  kv(os, "tokens", seq.tokens.size());
  return os.str();
}

std::size_t thread_cap() {
  std::size_t n = 0;
  if (const char* env = std::getenv("PTK_THREADS")) {
    auto v = io::parse_int<std::size_t>(env);
    if (!v) throw Error(ErrorKind::InvalidArgument, std::string("bad PTK_THREADS: ") + env);
    n = *v;
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

int cmd_tokenize(const TokenizeArgs& a) {
  const auto cfg = tokenizer_config(a);
  const fs::path in(a.input);
  if (!fs::exists(in)) throw Error(ErrorKind::Io, "no such input: " + a.input);
  if (!fs::is_directory(in)) {
    fs::path out = a.output.empty() ? fs::path(in).replace_extension(".tokens") : fs::path(a.output);
    std::cout << tokenize_one(in, out, cfg);
    return kOk;
  }

  // Directory batch: every .xyz/.ply file, outputs named after the inputs.
  if (a.output.empty()) throw Error(ErrorKind::InvalidArgument, "directory input needs --output DIR");
  const fs::path out_dir(a.output);
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".xyz" || ext == ".ply")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::string> summaries(files.size());
  std::vector<int> codes(files.size(), kOk);
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < files.size();) {
      try {
        summaries[i] = tokenize_one(files[i], out_dir / files[i].filename().replace_extension(".tokens"), cfg);
      } catch (const Error& e) {
        codes[i] = exit_code_for(e);
        std::lock_guard lock(err_mu);
        std::cerr << files[i].string() << ": " << e.what() << '\n';
      }
    }
  };
  const std::size_t n_threads = std::min(thread_cap(), std::max<std::size_t>(1, files.size()));
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();

  int code = kOk;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (codes[i] == kOk) {
      std::cout << summaries[i];
      ++ok;
    } else if (code == kOk) {
      code = codes[i];
    }
  }
  kv(std::cout, "files", files.size());
  kv(std::cout, "succeeded", ok);
  return code;
}

int cmd_inspect(const std::string& path, bool dump) {
  auto seq = import_sequence(path);
  auto rep = validate_grammar(seq);
  kv(std::cout, "verdict", rep.valid ? "VALID" : "INVALID");
  if (!rep.valid) kv(std::cout, "reason", rep.reason);
  kv(std::cout, "ordering", to_string(seq.ordering));
  kv(std::cout, "patches", seq.count(TokenKind::PointPatch));
  kv(std::cout, "layer_seps", seq.count(TokenKind::LayerSep));
  kv(std::cout, "row_seps", seq.count(TokenKind::RowSep));
  kv(std::cout, "tokens", seq.tokens.size());
  kv(std::cout, "patch_dim", seq.patch_matrix.cols);
  if (dump) {
    for (std::size_t i = 0; i < seq.cells.size(); ++i) {
      const auto& c = seq.cells[i];
      std::cout << "cell " << i << ' ' << c.z << ' ' << c.y << ' ' << c.x << '\n';
    }
  }
  return rep.valid ? kOk : kInvalid;
}

struct TrainArgs {
  std::string out_dir = ".";
  std::vector<int> stages{1, 2, 3};
  std::vector<std::size_t> steps;
  std::uint64_t seed = 7;
  std::size_t m = 8;
  std::size_t k = 3;
  std::string strategy = "zyx";
  bool no_separators = false;
};

// Default per-stage budgets; scene QA needs the longest run.
std::size_t default_steps(int stage) { return stage == 1 ? 2000 : stage == 2 ? 1000 : 4000; }

curriculum::CurriculumConfig curriculum_config(const TrainArgs& a) {
  curriculum::CurriculumConfig cfg;
  cfg.data_seed = a.seed;
  cfg.model.seed = a.seed;
  cfg.tokenizer.m = a.m;
  cfg.tokenizer.k = a.k;
  cfg.tokenizer.ordering = ordering_arg(a.strategy);
  cfg.tokenizer.separators = !a.no_separators;
  return cfg;
}

std::vector<std::size_t> stage_steps(const TrainArgs& a) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < a.stages.size(); ++i) {
    if (a.steps.empty()) out.push_back(default_steps(a.stages[i]));
    else if (a.steps.size() == 1) out.push_back(a.steps[0]);
    else if (a.steps.size() == a.stages.size()) out.push_back(a.steps[i]);
    else throw Error(ErrorKind::InvalidArgument, "--steps takes one value or one per stage");
  }
  return out;
}

int cmd_train(const TrainArgs& a) {
  for (int s : a.stages)
    if (s < 1 || s > 3) throw Error(ErrorKind::InvalidArgument, "stages are 1, 2, 3");
  const auto steps = stage_steps(a);
  curriculum::Curriculum cur(curriculum_config(a));
  auto res = cur.run(cur.init(), a.stages, steps);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  model::save_checkpoint(res.params, dir / "checkpoint.ptkc");
  io::write_file_atomic(dir / "metrics.csv", curriculum::format_metrics(res.metrics));
  kv(std::cout, "checkpoint", (dir / "checkpoint.ptkc").string());
  kv(std::cout, "metrics", (dir / "metrics.csv").string());
  kv(std::cout, "parameters", model::parameter_count(res.params));
  for (const auto& r : res.metrics) {
    if (r.metric == "loss") continue;
    kv(std::cout, "stage" + std::to_string(r.stage) + "." + r.metric, format_double(r.value));
  }
  return kOk;
}

curriculum::TokenizationVariant parse_variant(const std::string& label) {
  if (label == "zyx-nosep") return {Ordering::Zyx, false};
  const auto o = ordering_arg(label);
  return {o, o == Ordering::Zyx};
}

int cmd_ablate(const TrainArgs& a, const std::vector<std::string>& labels) {
  std::vector<curriculum::TokenizationVariant> variants;
  for (const auto& l : labels) variants.push_back(parse_variant(l));
  const std::size_t steps = a.steps.empty() ? 1000 : a.steps.front();
  auto rows = curriculum::ablate_tokenization(variants, steps, curriculum_config(a));
  std::cout << curriculum::format_ablation(rows);
  return kOk;
}

// Quick self-checks on random data; prints one key=value per check.
int cmd_verify(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  bool all_ok = true;
  auto report = [&](std::string_view name, bool ok) {
    kv(std::cout, name, ok ? "pass" : "fail");
    all_ok = all_ok && ok;
  };

  // every point lands in exactly one cell
  {
    bool ok = true;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50 && ok; ++trial) {
      PointCloud c;
      const std::size_t n = 1 + rng() % 3000;
      for (std::size_t i = 0; i < n; ++i) c.points.push_back({{u(rng), u(rng), u(rng)}, {0.5, 0.5, 0.5}});
      auto grid = partition(normalize(c), 8, 4);
      std::vector<int> seen(n, 0);
      for (const auto& [cell, members] : grid.cells)
        for (auto i : members) ++seen[i];
      ok = std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });
    }
    report("partition_cover", ok);
  }
  // patches always have exactly m points
  {
    bool ok = true;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t n = 1; n <= 32 && ok; ++n) {
      std::vector<Point> pts;
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < n; ++i) {
        pts.push_back({{u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng)}});
        idx.push_back(i);
      }
      auto p = standardize(pts, idx, 8, CellIndex{0, 0, 0});
      ok = p.points.size() == 8 && flatten(p).size() == 48;
    }
    report("patch_size", ok);
  }
  // curve ranks are bijections
  {
    bool ok = true;
    for (std::uint32_t order = 1; order <= 3 && ok; ++order) {
      const std::uint32_t side = 1u << order;
      std::vector<int> hs(std::size_t{side} * side * side, 0), ms(hs.size(), 0);
      for (std::uint32_t z = 0; z < side; ++z)
        for (std::uint32_t y = 0; y < side; ++y)
          for (std::uint32_t x = 0; x < side; ++x) {
            ++hs[hilbert_rank({z, y, x}, order)];
            ++ms[morton_rank({z, y, x}, order)];
          }
      ok = std::all_of(hs.begin(), hs.end(), [](int v) { return v == 1; }) &&
           std::all_of(ms.begin(), ms.end(), [](int v) { return v == 1; });
    }
    report("curve_bijection", ok);
  }
  // analytic vs numeric gradients of the toy model
  {
    model::ModelConfig mc;
    mc.d_model = 16;
    mc.n_heads = 2;
    mc.d_ff = 32;
    mc.max_seq = 32;
    mc.vocab_size = 12;
    mc.m = 4;
    mc.seed = seed;
    auto p = model::init_params(mc);
    PointCloud c;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 60; ++i) c.points.push_back({{u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng)}});
    auto seq = tokenize(c, {.m = 4, .k = 2}).sequence;
    const std::size_t start = seq.tokens.size();
    seq.tokens.push_back(Token::text(model::kFirstTextId));
    seq.tokens.push_back(Token::text(model::kFirstTextId + 1));
    std::vector<model::Example> batch{model::make_example(seq, start)};
    auto rep = model::compare_gradients(p, batch, [&] {
      model::ModelParams g;
      model::loss_and_grad(p, batch, &g);
      return g;
    }());
    double worst = 0.0;
    for (const auto& g : rep.groups) worst = std::max(worst, g.max_rel_error);
    kv(std::cout, "grad_check_samples", rep.checked);
    kv(std::cout, "grad_check_max_rel_error", format_double(worst));
    report("grad_check", rep.passed());
  }
  return all_ok ? kOk : kVerifyFailed;
}

std::vector<int> parse_stage_list(const std::string& s) {
  std::vector<int> out;
  for (char c : s) {
    if (c == ',' || c == ' ') continue;
    if (c < '1' || c > '3') throw Error(ErrorKind::InvalidArgument, "bad --stages: " + s);
    out.push_back(c - '0');
  }
  if (out.empty()) throw Error(ErrorKind::InvalidArgument, "empty --stages");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point-cloud patch tokenizer"};
  app.require_subcommand(1);

  TokenizeArgs tok;
  auto* tokenize_cmd = app.add_subcommand("tokenize", "tokenize an XYZ/PLY file or a directory of them");
  tokenize_cmd->add_option("input", tok.input, "input file or directory")->required();
  tokenize_cmd->add_option("-o,--output", tok.output, "token file (or directory for batch input)");
  tokenize_cmd->add_option("--m", tok.m, "points per patch")->check(CLI::PositiveNumber);
  tokenize_cmd->add_option("--k", tok.k, "max splits per axis")->check(CLI::PositiveNumber);
  tokenize_cmd->add_option("--strategy", tok.strategy, "zyx|hilbert|morton|fps")
      ->check(CLI::IsMember({"zyx", "hilbert", "morton", "fps"}));
  tokenize_cmd->add_flag("--no-separators", tok.no_separators, "omit LSEP/RSEP");
  tokenize_cmd->add_flag("--global-counts", tok.global_counts, "use whole-cloud counts for Y/X splits");
  tokenize_cmd->add_option("--fps-samples", tok.fps_samples, "centers for the fps strategy (0 = cell count)");

  std::string inspect_path;
  bool inspect_cells = false;
  auto* inspect_cmd = app.add_subcommand("inspect", "validate a token file and its matrix sidecar");
  inspect_cmd->add_option("tokens", inspect_path, "token file")->required();
  inspect_cmd->add_flag("--cells", inspect_cells, "list recorded cell indices");

  TrainArgs tr;
  std::string stages_arg = "1,2,3";
  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--out", tr.out_dir, "output directory");
    cmd->add_option("--steps", tr.steps, "steps per stage (one value, or one per stage)")->delimiter(',');
    cmd->add_option("--seed", tr.seed, "data and init seed");
    cmd->add_option("--m", tr.m, "points per patch")->check(CLI::PositiveNumber);
    cmd->add_option("--k", tr.k, "max splits per axis")->check(CLI::PositiveNumber);
    cmd->add_option("--strategy", tr.strategy, "zyx|hilbert|morton|fps")
        ->check(CLI::IsMember({"zyx", "hilbert", "morton", "fps"}));
    cmd->add_flag("--no-separators", tr.no_separators, "omit LSEP/RSEP");
  };
  auto* train_cmd = app.add_subcommand("train", "run the toy curriculum");
  add_train_flags(train_cmd);
  train_cmd->add_option("--stages", stages_arg, "stages to run, e.g. 1,2,3 or 2,3");

  std::vector<std::string> variants{"zyx", "zyx-nosep", "hilbert", "morton", "fps"};
  auto* ablate_cmd = app.add_subcommand("ablate", "compare tokenization strategies on stage-3 QA");
  add_train_flags(ablate_cmd);
  ablate_cmd->add_option("--variants", variants, "strategies to compare")->delimiter(',');

  std::uint64_t verify_seed = 0;
  auto* verify_cmd = app.add_subcommand("verify", "run quick invariant checks");
  verify_cmd->add_option("--seed", verify_seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*tokenize_cmd) return cmd_tokenize(tok);
    if (*inspect_cmd) return cmd_inspect(inspect_path, inspect_cells);
    if (*train_cmd) {
      tr.stages = parse_stage_list(stages_arg);
      return cmd_train(tr);
    }
    if (*ablate_cmd) return cmd_ablate(tr, variants);
    if (*verify_cmd) return cmd_verify(verify_seed);
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kParse;
  } catch (const Error& e) {
    std::cerr << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io: " << e.what() << '\n';
    return kIo;
  }
  return kUsage;
}
