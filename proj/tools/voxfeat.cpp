// voxfeat command-line tool: batch train / classify / render / viewpoints,
// evaluation on phantoms, and the HTTP service.

#include <chrono>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "voxfeat/phantom.hpp"
#include "voxfeat/workflow.hpp"
#include "voxfeat/service.hpp"

using namespace voxfeat;

namespace {

struct Common {
  std::string volume;
  std::string out = "voxfeat-out";
};

struct TrainFlags {
  int epochs = TrainConfig{}.epochs;
  double lr = TrainConfig{}.learningRate;
  int batch = TrainConfig{}.batchSize;
  std::uint64_t seed = 0;
  double lambdaGrad = TrainConfig{}.loss.gradient;
  double lambdaStat = TrainConfig{}.loss.stats;
  std::string gradientTarget = "vector";
  std::string fusion = "film";
  int levels = ModelConfig{}.grid.levels;
  int log2T = ModelConfig{}.grid.log2TableSize;
  std::string cache;
  bool half = false;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--batch", batch, "samples per step")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "initialization / shuffle seed");
    app->add_option("--lambda-grad", lambdaGrad, "gradient loss weight");
    app->add_option("--lambda-stat", lambdaStat, "local statistics loss weight");
    app->add_option("--gradient-target", gradientTarget, "vector|magnitude");
    app->add_option("--fusion", fusion, "none|concat|film");
    app->add_option("--levels", levels, "hash grid levels");
    app->add_option("--log2-table", log2T, "log2 of the per-level table size");
    app->add_option("--cache", cache, "feature cache directory (default: <out>/cache)");
    app->add_flag("--half", half, "store features as float16");
  }

  ModelConfig model() const {
    ModelConfig m;
    m.fusion = parse_fusion(fusion);
    m.grid.levels = levels;
    m.grid.log2TableSize = log2T;
    m.validate();
    return m;
  }
  TrainConfig train() const {
    TrainConfig t;
    t.epochs = epochs;
    t.learningRate = lr;
    t.batchSize = batch;
    t.seed = seed;
    t.loss.gradient = lambdaGrad;
    t.loss.stats = lambdaStat;
    require(gradientTarget == "vector" || gradientTarget == "magnitude", ErrorKind::InvalidArgument,
            "--gradient-target must be vector|magnitude", "gradient-target");
    t.loss.gradientMagnitudeOnly = gradientTarget == "magnitude";
    t.validate();
    return t;
  }
  FeatureStorage storage() const { return half ? FeatureStorage::Float16 : FeatureStorage::Float32; }
};

struct ForestFlags {
  int trees = ForestConfig{}.trees;
  int minSplit = ForestConfig{}.minSamplesSplit;
  int maxDepth = 0;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--trees", trees, "number of trees")->check(CLI::PositiveNumber);
    app->add_option("--min-samples-split", minSplit, "smallest node that may split");
    app->add_option("--max-depth", maxDepth, "depth limit (0: none)");
    app->add_option("--forest-seed", seed, "forest seed");
  }
  ForestConfig config() const {
    ForestConfig f;
    f.trees = trees;
    f.minSamplesSplit = minSplit;
    f.maxDepth = maxDepth;
    f.seed = seed;
    f.validate();
    return f;
  }
};

Dims dims_from(const std::vector<std::int64_t>& v) {
  require(v.size() == 1 || v.size() == 3, ErrorKind::InvalidArgument, "--dims takes n or nx,ny,nz", "dims");
  return v.size() == 1 ? Dims{v[0], v[0], v[0]} : Dims{v[0], v[1], v[2]};
}

ScalarVolume need_volume(const Common& c) {
  require(!c.volume.empty(), ErrorKind::InvalidArgument, "--volume is required", "volume");
  return load_volume(c.volume);
}

void say(const std::string& s) { std::cout << s << std::endl; }

EpochCallback progress_printer(int every) {
  auto start = std::chrono::steady_clock::now();
  return [every, start](const EpochReport& r) {
    if (r.epoch % every == 0 || r.epoch == r.epochs || r.epoch == 1) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::fprintf(stderr, "epoch %d/%d  loss %.6g  (intensity %.6g)  %.1fs\n", r.epoch, r.epochs, r.meanLoss.total,
                   r.meanLoss.intensity, s);
    }
    return true;
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxfeat: learned voxel features for scribble-driven volume classification"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with option values");

  Common common;
  auto addCommon = [&](CLI::App* sub, bool needVolume) {
    sub->add_option("-o,--out", common.out, "output directory");
    auto* o = sub->add_option("-v,--volume", common.volume, "volume payload (sidecar <path>.json)");
    if (needVolume) o->required();
  };

  // phantom
  auto* phantom = app.add_subcommand("phantom", "write a synthetic volume and its label volume");
  std::string kind = "nested-spheres";
  std::vector<std::int64_t> dimsArg{64};
  std::uint64_t phantomSeed = 0;
  double noise = PhantomParams{}.noise;
  addCommon(phantom, false);
  phantom->add_option("--kind", kind, "nested-spheres|engraved-cube|tube-tree|tornado-field");
  phantom->add_option("--dims", dimsArg, "n or nx,ny,nz")->delimiter(',');
  phantom->add_option("--seed", phantomSeed, "noise seed");
  phantom->add_option("--noise", noise, "Gaussian noise sigma");

  // train / features
  TrainFlags tf;
  auto* train = app.add_subcommand("train", "fit the neural field and cache per-voxel features");
  addCommon(train, true);
  tf.add(train);
  auto* features = app.add_subcommand("features", "re-extract features from the output checkpoint");
  addCommon(features, true);
  features->add_flag("--half", tf.half, "store features as float16");

  // classify
  ForestFlags ff;
  std::string scribblePath, simulate, labelPath;
  std::uint64_t scribbleSeed = 0;
  bool retrain = false;
  double tau = 0.5;
  auto* classify = app.add_subcommand("classify", "fit the forest on scribbles and predict class probabilities");
  addCommon(classify, true);
  ff.add(classify);
  classify->add_option("--scribbles", scribblePath, "scribble document (JSON)");
  classify->add_option("--simulate", simulate, "simulate scribbles at level S1..S4 from --labels");
  classify->add_option("--labels", labelPath, "ground-truth label volume (for --simulate)");
  classify->add_option("--scribble-seed", scribbleSeed, "seed for simulated scribbles");
  classify->add_flag("--retrain", retrain, "retrain when the feature cache is missing or stale");

  // render
  std::vector<double> dir{1, 1, 1}, eye, target, up;
  double fov = 40, step = RenderConfig{}.stepSize, radius = 1.5;
  int width = 256, height = 256;
  std::string mode = "probabilistic", tfPath, imageName = "render";
  auto* render = app.add_subcommand("render", "ray-cast the probability volume to a PNG");
  addCommon(render, true);
  render->add_option("--dir", dir, "orbit direction x,y,z")->delimiter(',')->expected(3);
  render->add_option("--radius", radius, "orbit radius in volume diagonals");
  render->add_option("--eye", eye, "explicit eye x,y,z")->delimiter(',')->expected(3);
  render->add_option("--target", target, "explicit target x,y,z")->delimiter(',')->expected(3);
  render->add_option("--up", up, "explicit up x,y,z")->delimiter(',')->expected(3);
  render->add_option("--fov", fov, "vertical field of view (degrees) with --eye");
  render->add_option("--width", width);
  render->add_option("--height", height);
  render->add_option("--mode", mode, "probabilistic|probabilityIntensity");
  render->add_option("--tf", tfPath, "transfer function document (default: <out>/tf.json or built-in)");
  render->add_option("--step", step, "ray step in voxels");
  render->add_option("--name", imageName, "output image name without extension");

  // slices
  int axis = 2;
  std::vector<std::int64_t> indices;
  std::string overlay = "none";
  int scale = 1;
  double alpha = 0.6;
  auto* slices = app.add_subcommand("slices", "write slice images with optional overlays");
  addCommon(slices, true);
  slices->add_option("--axis", axis, "0=x 1=y 2=z");
  slices->add_option("--index", indices, "slice indices (default: middle)")->delimiter(',');
  slices->add_option("--overlay", overlay, "none|scribbles|probability|label");
  slices->add_option("--labels", labelPath, "label volume for the label overlay");
  slices->add_option("--scale", scale, "integer zoom");
  slices->add_option("--alpha", alpha, "overlay opacity");

  // viewpoints
  ViewpointOptions vo;
  int thumbSize = 128;
  auto* viewpoints = app.add_subcommand("viewpoints", "cluster features and recommend viewpoints");
  addCommon(viewpoints, true);
  viewpoints->add_option("-K,--clusters", vo.kmeans.k, "k-means clusters");
  viewpoints->add_option("-M,--candidates", vo.candidates, "candidate viewpoints on the sphere");
  viewpoints->add_option("--seed", vo.kmeans.seed, "k-means seed");
  viewpoints->add_option("--max-views", vo.greedy.maxViews, "greedy stop: view count");
  viewpoints->add_option("--coverage", vo.greedy.coverageTarget, "greedy stop: covered fraction");
  viewpoints->add_option("--angle", vo.visibilityAngle, "visibility half-angle (degrees)");
  viewpoints->add_option("--thumbnail-size", thumbSize, "thumbnail edge in pixels (0: none)");

  // eval
  auto* eval = app.add_subcommand("eval", "score the probability volume against a label volume");
  addCommon(eval, false);
  eval->add_option("--labels", labelPath, "ground-truth label volume")->required();
  eval->add_option("--tau", tau, "background threshold");

  // ablate
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<std::string> configNames;
  std::string level = "S1";
  auto* ablate = app.add_subcommand("ablate", "feature ablation on a phantom");
  addCommon(ablate, false);
  tf.add(ablate);
  ff.add(ablate);
  ablate->add_option("--kind", kind, "phantom kind");
  ablate->add_option("--dims", dimsArg, "n or nx,ny,nz")->delimiter(',');
  ablate->add_option("--noise", noise, "phantom noise sigma");
  ablate->add_option("--seeds", seeds, "seeds")->delimiter(',');
  ablate->add_option("--level", level, "scribble budget S1..S4");
  ablate->add_option("--configs", configNames, "subset of base_inr,struct_concat,film,full,local_5d")->delimiter(',');

  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  tf.add(serve);
  ff.add(serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageExitCode;
  }

  const Workdir wd{common.out};
  try {
    if (*phantom) {
      PhantomParams pp;
      pp.kind = parse_phantom_kind(kind);
      pp.dims = dims_from(dimsArg);
      pp.seed = phantomSeed;
      pp.noise = noise;
      const Phantom ph = generate_phantom(pp);
      fs::create_directories(wd.root);
      save_volume(ph.volume, wd.root / "volume.raw");
      save_labels(ph.labels, wd.root / "labels.raw");
      say("phantom " + std::string(to_string(pp.kind)) + " " + dims_string(pp.dims) + " -> " +
          (wd.root / "volume.raw").string());
    } else if (*train) {
      const ScalarVolume vol = need_volume(common);
      const auto r = train_into(wd, vol, tf.model(), tf.train(), tf.cache, progress_printer(10), tf.storage());
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
      say(std::string(r.cacheHit ? "cache hit " : "trained ") + r.key);
    } else if (*features) {
      const ScalarVolume vol = need_volume(common);
      const FeatureVolume fv = extract_into(wd, vol, tf.storage());
      say("features " + std::to_string(fv.width) + " x " + dims_string(fv.dims) + " -> " + wd.features().string());
    } else if (*classify) {
      const ScalarVolume vol = need_volume(common);
      FeatureVolume fv;
      try {
        fv = load_checked_features(wd, vol);
      } catch (const Error& e) {
        if (!retrain || (e.kind() != ErrorKind::StaleFeatures && e.kind() != ErrorKind::MissingFeatures)) throw;
        std::cerr << "retraining: " << e.what() << '\n';
        ModelConfig mc;
        TrainConfig tc;
        if (fs::exists(wd.meta())) std::tie(mc, tc) = recorded_configs(wd);
        train_into(wd, vol, mc, tc, {}, progress_printer(10));
        fv = load_checked_features(wd, vol);
      }
      ScribbleSet scribbles;
      if (!simulate.empty()) {
        require(!labelPath.empty(), ErrorKind::InvalidArgument, "--simulate needs --labels", "labels");
        const LabelVolume labels = load_labels(labelPath);
        require(labels.dims() == vol.dims(), ErrorKind::ShapeMismatch, "label dims differ from the volume", "labels");
        scribbles = simulate_scribbles(labels, parse_scribble_level(simulate), scribbleSeed);
      } else {
        require(!scribblePath.empty(), ErrorKind::InvalidArgument, "--scribbles or --simulate is required",
                "scribbles");
        scribbles = scribbles_from_json(read_json_file(scribblePath, "scribbles"), vol.dims());
      }
      const auto r = classify_into(wd, fv, scribbles, ff.config());
      say("classified " + std::to_string(scribbles.size()) + " scribbled voxels, " +
          std::to_string(r.probabilities.numClasses) + " classes; training accuracy " + accuracy_json(r.accuracy).dump());
    } else if (*render) {
      const ScalarVolume vol = need_volume(common);
      const ProbabilityVolume pv = load_probabilities(wd.probabilities());
      require(pv.dims == vol.dims(), ErrorKind::ShapeMismatch, "probability dims differ from the volume", "volume");
      json cam{{"width", width}, {"height", height}};
      if (!eye.empty()) {
        cam["eye"] = eye;
        if (!target.empty()) cam["target"] = target;
        if (!up.empty()) cam["up"] = up;
        cam["fovY"] = fov;
      } else {
        cam["dir"] = dir;
        cam["radiusFactor"] = radius;
      }
      RenderConfig rc;
      rc.mode = parse_render_mode(mode);
      rc.stepSize = step;
      const TfSet tfs = resolve_tfs(wd, tfPath, pv.foreground_classes());
      const Image img = voxfeat::render(vol, pv, tfs, camera_from_json(cam, vol.dims()), rc);
      save_png(img, wd.render_image(imageName));
      say("render -> " + wd.render_image(imageName).string());
    } else if (*slices) {
      const ScalarVolume vol = need_volume(common);
      SliceOptions opt;
      opt.overlay = parse_overlay(overlay);
      opt.scale = scale;
      opt.alpha = alpha;
      std::optional<ProbabilityVolume> pv;
      std::optional<LabelVolume> labels;
      std::optional<ScribbleSet> scribbles;
      if (opt.overlay == Overlay::Probability) opt.probabilities = &pv.emplace(load_probabilities(wd.probabilities()));
      if (opt.overlay == Overlay::Label) {
        require(!labelPath.empty(), ErrorKind::InvalidArgument, "label overlay needs --labels", "labels");
        opt.labels = &labels.emplace(load_labels(labelPath));
      }
      if (opt.overlay == Overlay::Scribbles)
        opt.scribbles = &scribbles.emplace(scribbles_from_json(read_json_file(wd.scribbles(), "scribbles"), vol.dims()));
      const Dims d = vol.dims();
      const std::int64_t extent = axis == 0 ? d.nx : axis == 1 ? d.ny : d.nz;
      if (indices.empty()) indices.push_back(extent / 2);
      fs::create_directories(wd.root);
      for (const auto idx : indices) {
        const fs::path p = wd.root / ("slice_" + std::string(1, "xyz"[std::clamp(axis, 0, 2)]) + "_" +
                                      std::to_string(idx) + "_" + overlay + ".png");
        save_png(render_slice(vol, axis, idx, opt), p);
        say("slice -> " + p.string());
      }
    } else if (*viewpoints) {
      const ScalarVolume vol = need_volume(common);
      const FeatureVolume fv = load_checked_features(wd, vol);
      const auto [mc, tcUnused] = recorded_configs(wd);
      const DerivedFields fields = compute_derived_fields(vol, mc.patchSide);
      const ViewpointReport r = recommend_viewpoints(fv, fields, vo);
      write_text(wd.viewpoint_report(), r.to_json(true).dump(2));
      if (thumbSize > 0)
        for (std::size_t i = 0; i < r.selected.size(); ++i)
          save_png(viewpoint_thumbnail(vol, r.views, r.selected[i].index, thumbSize), wd.thumbnail(int(i)));
      const double cov = r.selected.empty() ? 0.0 : r.selected.back().coverage;
      say(std::to_string(r.selected.size()) + " viewpoints cover " + std::to_string(cov) + " of " +
          std::to_string(r.k) + " clusters -> " + wd.viewpoint_report().string());
    } else if (*eval) {
      const ProbabilityVolume pv = load_probabilities(wd.probabilities());
      const LabelVolume gt = load_labels(labelPath);
      require(pv.dims == gt.dims(), ErrorKind::ShapeMismatch, "probability and label dims differ", "labels");
      const F1Report f = f1_scores(apply_background_rule(pv, tau), gt);
      write_text(wd.eval_report(),
                 json{{"perClassF1", f.perClass}, {"meanF1", f.mean}, {"stdF1", f.stddev}, {"tau", tau}}.dump(2));
      say("mean F1 " + std::to_string(f.mean) + " +- " + std::to_string(f.stddev) + " -> " + wd.eval_report().string());
    } else if (*ablate) {
      PhantomParams pp;
      pp.kind = parse_phantom_kind(kind);
      pp.dims = dims_from(dimsArg);
      pp.noise = noise;
      const Phantom ph = generate_phantom(pp);
      AblationOptions opt;
      opt.budget = parse_scribble_level(level);
      opt.seeds = seeds;
      opt.model = tf.model();
      opt.train = tf.train();
      opt.forest = ff.config();
      if (!configNames.empty()) {
        std::vector<AblationConfig> chosen;
        for (const auto& n : configNames) {
          const auto all = default_ablation_configs();
          const auto it = std::find_if(all.begin(), all.end(), [&](const AblationConfig& c) { return c.name == n; });
          require(it != all.end(), ErrorKind::InvalidArgument, "unknown ablation config '" + n + "'", "configs");
          chosen.push_back(*it);
        }
        opt.configs = chosen;
      }
      const AblationTable t = run_ablation(ph, opt, [](const AblationCell& c) {
        std::fprintf(stderr, "%s seed %llu: mean F1 %.4f\n", c.config.c_str(), (unsigned long long)c.seed, c.f1.mean);
      });
      std::ostringstream csv;
      t.write_csv(csv);
      write_text(wd.root / "ablation.csv", csv.str());
      std::cout << t.summary();
    } else if (*serve) {
      ServiceConfig sc;
      sc.cacheDir = tf.cache;
      sc.model = tf.model();
      sc.train = tf.train();
      sc.forest = ff.config();
      Service svc(sc);
      say("listening on http://" + host + ":" + std::to_string(port));
      if (!svc.listen(host, port)) fail(ErrorKind::Io, "cannot listen on " + host + ":" + std::to_string(port), "port");
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << (e.field().empty() ? "" : ", " + e.field()) << "): " << e.what()
              << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
