// Command-line front end: synthetic data generation, training, the three
// inference engines, pixel metrics, and the timing benchmark.
//
// Exit codes: 0 success, 2 usage/validation error, 1 runtime error.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flashdet/evaluation.hpp"
#include "flashdet/inference.hpp"
#include "flashdet/network.hpp"
#include "flashdet/parallel.hpp"
#include "flashdet/storage_io.hpp"
#include "flashdet/synth_data.hpp"
#include "flashdet/trainer.hpp"

namespace fs = std::filesystem;
using namespace flashdet;

namespace {

// Input validation failures map to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("FLASH_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return default_thread_count();
}

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string zero_pad(int value, int width) {
  std::ostringstream os;
  os.width(width);
  os.fill('0');
  os << value;
  return os.str();
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

Engine parse_engine(const std::string& name) {
  if (name == "dense") return Engine::kDense;
  if (name == "strided") return Engine::kStrided;
  if (name == "flash") return Engine::kFlash;
  throw UsageError("unknown engine '" + name + "' (expected dense, strided, or flash)");
}

// ---------------------------------------------------------------------------
// generate / generate-train

struct GenerateArgs {
  std::uint64_t seed = 0;
  int cores = 1;
  int size = 512;
  double tumor_fraction = 0.3;
  std::string out_dir;
};

int run_generate(const GenerateArgs& a) {
  fs::create_directories(a.out_dir);
  std::ofstream manifest(fs::path(a.out_dir) / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + a.out_dir);
  manifest << "file,tumor_fraction,seed\n";
  for (int i = 0; i < a.cores; ++i) {
    SynthSpec spec;
    spec.seed = a.seed + static_cast<std::uint64_t>(i);
    spec.side = a.size;
    spec.tumor_fraction = a.tumor_fraction;
    const auto [image, mask] = generate_core(spec);
    const std::string stem = "core_" + zero_pad(i, 3);
    write_image(image, (fs::path(a.out_dir) / (stem + ".png")).string());
    write_mask(mask, (fs::path(a.out_dir) / (stem + "_mask.png")).string());
    manifest << stem << ".png," << a.tumor_fraction << ',' << spec.seed << '\n';
  }
  std::cout << "wrote " << a.cores << " cores to " << a.out_dir << "\n";
  return 0;
}

struct GenerateTrainArgs {
  std::uint64_t seed = 0;
  int regions_tumor = 10;
  int regions_normal = 10;
  std::string out_dir;
};

int run_generate_train(const GenerateTrainArgs& a) {
  fs::create_directories(a.out_dir);
  std::ofstream manifest(fs::path(a.out_dir) / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + a.out_dir);
  manifest << "file,label,seed\n";
  const std::vector<LabeledRegion> regions =
      generate_training_regions(a.seed, a.regions_tumor, a.regions_normal);
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const std::string name = "region_" + zero_pad(static_cast<int>(i), 4) + ".png";
    write_image(regions[i].image, (fs::path(a.out_dir) / name).string());
    manifest << name << ',' << (regions[i].label ? "tumor" : "non_tumor") << ',' << a.seed
             << '\n';
  }
  std::cout << "wrote " << regions.size() << " regions to " << a.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data_dir;
  int epochs = 500;
  double lr = 0.002;
  double momentum = 0.9;
  int batch = 128;
  std::uint64_t seed = 0;
  int crops_per_angle = 3;
  std::string out_model;
  std::string history_csv;
};

int run_train(const TrainArgs& a) {
  if (!fs::is_directory(a.data_dir))
    throw UsageError("data directory " + a.data_dir + " does not exist");
  const auto rows = read_csv((fs::path(a.data_dir) / "manifest.csv").string());
  std::vector<LabeledRegion> regions;
  for (std::size_t i = 1; i < rows.size(); ++i) {  // row 0 is the header
    if (rows[i].size() < 2) throw UsageError("manifest row " + std::to_string(i) + " is short");
    LabeledRegion r;
    r.image = read_image((fs::path(a.data_dir) / rows[i][0]).string());
    r.label = (rows[i][1] == "tumor" || rows[i][1] == "1") ? 1 : 0;
    regions.push_back(std::move(r));
  }
  if (regions.empty()) throw UsageError("manifest in " + a.data_dir + " lists no regions");

  std::cout << "training: epochs=" << a.epochs << " lr=" << a.lr
            << " momentum=" << a.momentum << " batch=" << a.batch << " seed=" << a.seed
            << " regions=" << regions.size() << "\n";

  const PatchDataset ds =
      build_patch_dataset(regions, kAugmentAngles, a.crops_per_angle, 0.1, a.seed);
  std::cout << "patches=" << ds.patches.size() << " train=" << ds.train_indices.size()
            << " val=" << ds.val_indices.size() << "\n";

  Model model = build_model(a.seed);
  OptimizerState state = make_optimizer_state(model, static_cast<float>(a.lr),
                                              static_cast<float>(a.momentum));
  const std::vector<EpochStats> history = train(model, ds, a.epochs, a.batch, state, a.seed);
  save_model(model, a.out_model);
  if (!a.history_csv.empty()) write_history_csv(history, a.history_csv);
  std::cout << "final val_acc=" << history.back().val_accuracy << " model=" << a.out_model
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
  std::string model_path;
  std::string image_path;
  std::string engine = "dense";
  int stride = 0;  // 0 = engine default
  int threads = 0;
  std::string out_mask;
  std::string out_prob;
};

int run_infer(const InferArgs& a) {
  const Engine engine = parse_engine(a.engine);
  if (engine == Engine::kFlash && a.stride != 0)
    throw UsageError("--stride does not apply to the flash engine");
  const int stride = a.stride != 0 ? a.stride : (engine == Engine::kStrided ? 32 : 1);
  if (stride < 1 || stride > 32) throw UsageError("stride must be in [1, 32]");
  const int threads = resolve_threads(a.threads);

  const Model model = load_model(a.model_path);
  const Tensor3 image = read_image(a.image_path);
  InferenceConfig cfg;
  cfg.stride = stride;
  cfg.engine = engine;
  cfg.threads = threads;
  cfg.validate(image.height, image.width);

  EngineStats stats;
  const double t0 = now_seconds();
  Mask mask;
  Tensor3 prob;
  if (engine == Engine::kFlash) {
    const LabelGrid grid = flash_infer(model, image, threads, &stats);
    std::tie(mask, prob) = grid_to_mask(grid, image.height, image.width);
  } else {
    std::tie(mask, prob) = strided_infer(model, image, stride, threads, &stats);
  }
  const double wall = now_seconds() - t0;

  write_mask(mask, a.out_mask);
  write_prob_map(prob, a.out_prob);
  std::cout << "engine=" << a.engine << " stride=" << (engine == Engine::kFlash ? 4 : stride)
            << " threads=" << threads << " wall_seconds=" << wall
            << " conv_stack_invocations=" << stats.conv_stack_invocations
            << " classifier_head_invocations=" << stats.head_invocations << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string pred_path;
  std::string gt_path;
  std::string prob_path;
  std::string out_csv;
  std::string roc_csv;
};

int run_eval(const EvalArgs& a) {
  const Mask pred = read_mask(a.pred_path);
  const Mask gt = read_mask(a.gt_path);
  const Tensor3 prob = read_prob_map(a.prob_path);
  if (pred.height != gt.height || pred.width != gt.width)
    throw UsageError("prediction is " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " but ground truth is " +
                     std::to_string(gt.height) + "x" + std::to_string(gt.width));
  if (prob.height != gt.height || prob.width != gt.width)
    throw UsageError("probability map is " + std::to_string(prob.height) + "x" +
                     std::to_string(prob.width) + " but ground truth is " +
                     std::to_string(gt.height) + "x" + std::to_string(gt.width));

  const CoreMetrics m = evaluate_core(pred, prob, gt);
  write_metrics_csv({{fs::path(a.pred_path).stem().string(), m}}, a.out_csv);
  if (!a.roc_csv.empty()) write_roc_csv(roc_curve(prob, gt), a.roc_csv);
  std::cout << "sensitivity=" << m.sensitivity << " precision=" << m.precision
            << " f1=" << m.f1 << " specificity=" << m.specificity << " auc=" << m.auc
            << " degenerate_flags=" << m.degenerate_flags << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string model_path;
  std::string sizes = "256,512";
  std::string engines = "dense,flash";
  int repeats = 3;
  int threads = 0;
  std::string out_csv;
};

struct BenchRow {
  std::string engine;
  int image_side = 0;
  int repeats = 0;
  double mean_seconds = 0.0;
  double std_seconds = 0.0;
  std::int64_t conv_stack_invocations = 0;
  std::int64_t head_invocations = 0;
  double speedup_vs_dense = 0.0;  // 0 when dense was not benchmarked
};

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> items;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

std::int64_t expected_conv_invocations(Engine engine, int side, int stride) {
  switch (engine) {
    case Engine::kDense:
      return count_patches_dense(side, 32);
    case Engine::kFlash:
      return count_patches_flash(side, 32);
    case Engine::kStrided: {
      const std::int64_t n = (side - 32) / stride + 1;
      return n * n;
    }
  }
  return 0;
}

int run_bench(const BenchArgs& a) {
  if (a.repeats < 3) throw UsageError("--repeats must be at least 3");
  const int threads = resolve_threads(a.threads);
  const std::vector<std::string> engine_names = split_list(a.engines);
  if (engine_names.empty()) throw UsageError("no engines requested");
  std::vector<Engine> engines;
  for (const std::string& name : engine_names) engines.push_back(parse_engine(name));
  std::vector<int> sides;
  for (const std::string& s : split_list(a.sizes)) {
    const int side = std::atoi(s.c_str());
    if (side < 32) throw UsageError("size '" + s + "' must be an integer >= 32");
    sides.push_back(side);
  }
  if (sides.empty()) throw UsageError("no sizes requested");

  const Model model = load_model(a.model_path);
  std::vector<BenchRow> rows;

  for (const int side : sides) {
    SynthSpec spec;
    spec.seed = 1000 + static_cast<std::uint64_t>(side);
    spec.side = side;
    spec.tumor_fraction = 0.4;
    const auto [image, mask_unused] = generate_core(spec);

    double dense_mean = 0.0;
    for (std::size_t e = 0; e < engines.size(); ++e) {
      const Engine engine = engines[e];
      const int stride = engine == Engine::kStrided ? 32 : 1;
      auto run_once = [&](EngineStats* stats) {
        if (engine == Engine::kFlash)
          flash_infer(model, image, threads, stats);
        else
          dense_infer(model, image, stride, threads, stats);
      };

      run_once(nullptr);  // warm-up, discarded
      std::vector<double> times;
      EngineStats stats;
      for (int rep = 0; rep < a.repeats; ++rep) {
        EngineStats rep_stats;
        const double t0 = now_seconds();
        run_once(&rep_stats);
        times.push_back(now_seconds() - t0);
        stats = rep_stats;
      }

      const std::int64_t expected = expected_conv_invocations(engine, side, stride);
      if (stats.conv_stack_invocations != expected)
        throw std::runtime_error("conv invocation count " +
                                 std::to_string(stats.conv_stack_invocations) +
                                 " does not match the formula value " +
                                 std::to_string(expected));

      const MeanStd ms = mean_std(times);
      BenchRow row;
      row.engine = engine_names[e];
      row.image_side = side;
      row.repeats = a.repeats;
      row.mean_seconds = ms.mean;
      row.std_seconds = ms.stddev;
      row.conv_stack_invocations = stats.conv_stack_invocations;
      row.head_invocations = stats.head_invocations;
      if (engine == Engine::kDense && stride == 1) dense_mean = ms.mean;
      if (dense_mean > 0.0 && ms.mean > 0.0) row.speedup_vs_dense = dense_mean / ms.mean;
      rows.push_back(row);
      std::cout << "engine=" << row.engine << " size=" << side << " mean=" << ms.mean
                << "s std=" << ms.stddev << "s\n";
    }
  }

  std::ofstream f(a.out_csv);
  if (!f) throw std::runtime_error("cannot open " + a.out_csv);
  f << "engine,image_side,repeats,mean_seconds,std_seconds,conv_stack_invocations,"
       "classifier_head_invocations,speedup_vs_dense\n";
  for (const BenchRow& r : rows) {
    f << r.engine << ',' << r.image_side << ',' << r.repeats << ',' << r.mean_seconds << ','
      << r.std_seconds << ',' << r.conv_stack_invocations << ',' << r.head_invocations << ',';
    if (r.speedup_vs_dense > 0.0) f << r.speedup_vs_dense;
    f << '\n';
  }
  f << "# threads=" << threads << '\n';
  f << "# reference full-scale processing times: dense 9489.2s vs flash 96.65s "
       "(ratio 98.2)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tumor-region detection: patch CNN training, dense and "
               "feature-space sliding-window inference, metrics, benchmarks"};
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* generate = app.add_subcommand("generate", "Generate synthetic cores with masks");
  generate->add_option("--seed", gen.seed, "Base seed (core i uses seed+i)");
  generate->add_option("--cores", gen.cores, "Number of cores")->check(CLI::PositiveNumber);
  generate->add_option("--size", gen.size, "Core image side in pixels")
      ->check(CLI::Range(64, 1 << 20));
  generate->add_option("--tumor-fraction", gen.tumor_fraction, "Tumor share of the core")
      ->check(CLI::Range(0.0, 1.0));
  generate->add_option("--out", gen.out_dir, "Output directory")->required();

  GenerateTrainArgs gt;
  CLI::App* gen_train =
      app.add_subcommand("generate-train", "Generate pure-class training regions");
  gen_train->add_option("--seed", gt.seed, "Base seed");
  gen_train->add_option("--regions-tumor", gt.regions_tumor, "Tumor region count")
      ->check(CLI::NonNegativeNumber);
  gen_train->add_option("--regions-normal", gt.regions_normal, "Non-tumor region count")
      ->check(CLI::NonNegativeNumber);
  gen_train->add_option("--out", gt.out_dir, "Output directory")->required();

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train the patch classifier");
  train_cmd->add_option("--data", tr.data_dir, "Directory from generate-train")->required();
  train_cmd->add_option("--epochs", tr.epochs, "Training epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tr.lr, "Learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--momentum", tr.momentum, "Nesterov momentum")
      ->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--batch", tr.batch, "Minibatch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tr.seed, "Seed for init, split, shuffle, dropout");
  train_cmd->add_option("--crops-per-angle", tr.crops_per_angle, "Crops per rotation angle")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--out", tr.out_model, "Checkpoint path")->required();
  train_cmd->add_option("--history", tr.history_csv, "Per-epoch history CSV");

  InferArgs inf;
  CLI::App* infer_cmd = app.add_subcommand("infer", "Classify an image with an engine");
  infer_cmd->add_option("--model", inf.model_path, "Checkpoint path")->required();
  infer_cmd->add_option("--image", inf.image_path, "Input image (PNG or PPM)")->required();
  infer_cmd->add_option("--engine", inf.engine, "dense, strided, or flash");
  infer_cmd->add_option("--stride", inf.stride, "Window stride (dense/strided only)");
  infer_cmd->add_option("--threads", inf.threads, "Worker threads (FLASH_THREADS fallback)");
  infer_cmd->add_option("--out-mask", inf.out_mask, "Output mask PNG")->required();
  infer_cmd->add_option("--out-prob", inf.out_prob, "Output probability map (FPRB)")
      ->required();

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a prediction against ground truth");
  eval_cmd->add_option("--pred", ev.pred_path, "Predicted mask PNG")->required();
  eval_cmd->add_option("--gt", ev.gt_path, "Ground-truth mask PNG")->required();
  eval_cmd->add_option("--prob", ev.prob_path, "Probability map (FPRB)")->required();
  eval_cmd->add_option("--out", ev.out_csv, "Metrics CSV")->required();
  eval_cmd->add_option("--roc", ev.roc_csv, "ROC CSV");

  BenchArgs be;
  CLI::App* bench_cmd = app.add_subcommand("bench", "Time engines on synthetic cores");
  bench_cmd->add_option("--model", be.model_path, "Checkpoint path")->required();
  bench_cmd->add_option("--sizes", be.sizes, "Comma-separated image sides");
  bench_cmd->add_option("--engines", be.engines, "Comma-separated engine names");
  bench_cmd->add_option("--repeats", be.repeats, "Timed runs per configuration (>= 3)");
  bench_cmd->add_option("--threads", be.threads, "Worker threads (FLASH_THREADS fallback)");
  bench_cmd->add_option("--out", be.out_csv, "Report CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    std::cerr << app.help() << "\n";
    return 2;
  }

  try {
    if (generate->parsed()) return run_generate(gen);
    if (gen_train->parsed()) return run_generate_train(gt);
    if (train_cmd->parsed()) return run_train(tr);
    if (infer_cmd->parsed()) return run_infer(inf);
    if (eval_cmd->parsed()) return run_eval(ev);
    if (bench_cmd->parsed()) return run_bench(be);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
