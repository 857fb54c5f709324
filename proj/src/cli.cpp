#include "maskdiff/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "maskdiff/dataset.hpp"
#include "maskdiff/diffusion.hpp"
#include "maskdiff/image_io.hpp"
#include "maskdiff/manifest.hpp"
#include "maskdiff/metrics.hpp"
#include "maskdiff/pairs.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/toyset.hpp"
#include "maskdiff/trainer.hpp"

namespace maskdiff::cli {

namespace fs = std::filesystem;

namespace {

struct ModelOptions {
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2, 2};
  int time_embed_dim = 128;
  int groups = 8;
};

struct TrainOptions {
  std::string manifest;
  std::string catalog;
  std::string out;
  std::string masks = "all";
  int diffusion_steps = 1000;
  TrainConfig config;
  ModelOptions model;
};

struct FinetuneOptions {
  std::string base;
  std::string category;
  std::string manifest;
  std::string catalog;
  std::string out;
  std::string masks = "all";
  TrainConfig config;
};

struct SampleOptions {
  std::string checkpoint;
  std::vector<std::string> masks;
  std::string mask_dir;
  std::string out;
  std::string category;
  int per_mask = 1;
  uint64_t seed = 0;
  bool no_clip = false;
};

struct EvalOptions {
  std::string real;
  std::string gen;
  std::string extractor = "pooled-denoiser-encoder";
  std::string checkpoint;
  int subset_size = 0;
  int n_subsets = 100;
  uint64_t seed = 0;
};

ClassCatalog catalog_or_standard(const std::string& path) {
  return path.empty() ? ClassCatalog::standard() : ClassCatalog::load(path);
}

// *.pgm files in `dir`, sorted by file name.
std::vector<fs::path> list_pgm(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir);
}

void add_train_config_flags(CLI::App* cmd, TrainConfig& c) {
  cmd->add_option("--lr", c.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--batch-size", c.batch_size, "Micro-batch size")->capture_default_str();
  cmd->add_option("--accumulation", c.accumulation_steps, "Micro-batches per optimizer step")->capture_default_str();
  cmd->add_option("--ema-decay", c.ema_decay, "EMA decay of the weights")->capture_default_str();
  cmd->add_option("--patience", c.patience_epochs, "Early-stopping patience in epochs")->capture_default_str();
  cmd->add_option("--max-epochs", c.max_epochs, "Epoch cap")->capture_default_str();
  cmd->add_option("--max-steps", c.max_steps, "Optimizer-step cap (0 = none)")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Seed for initialization, shuffling and noise")->capture_default_str();
}

TrainHooks logging_hooks(std::ostream& err) {
  TrainHooks hooks;
  hooks.on_epoch = [&err](int epoch, double train_loss, double val_loss) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "epoch %d: train_loss=%.6f val_loss=%.6f", epoch, train_loss, val_loss);
    err << buf << std::endl;
  };
  return hooks;
}

int finish_training(const TrainResult& r, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  save_checkpoint(r.best, out_dir);
  if (r.aborted) err << "training aborted: " << r.abort_reason << "; wrote last good checkpoint\n";
  out << "checkpoint=" << out_dir << "\n";
  out << "checkpoint_id=" << r.best.id() << "\n";
  out << "best_epoch=" << r.best.epoch << "\n";
  out << "best_val_loss=" << r.best.best_val_loss << "\n";
  out << "epochs_run=" << r.epochs_run << "\n";
  out << "optimizer_steps=" << r.optimizer_steps << "\n";
  return r.aborted ? 1 : 0;
}

int cmd_toyset(const std::string& out_dir, int n, uint64_t seed, std::ostream& out) {
  if (n < 1) throw std::invalid_argument("--n must be >= 1");
  write_toyset(out_dir, n, seed);
  out << "wrote " << n << " images to " << out_dir << "\n";
  return 0;
}

int cmd_masks_build(const std::string& ann_dir, const std::string& catalog_path, const std::string& out_dir,
                    const std::string& kind, int resolution, std::ostream& out, std::ostream& err) {
  const ClassCatalog catalog = catalog_or_standard(catalog_path);
  const MaskSelection selection = parse_mask_selection(kind);
  const auto files = list_pgm(ann_dir);
  ensure_dir(out_dir);
  std::ostringstream index;
  index << "file\tkind\tdefect_class\tdefect_name\tsource_id\tcategory\n";
  int written = 0;
  for (const auto& path : files) {
    AnnotationMap a = load_annotation(path.string(), catalog);
    if (resolution > 0) a = resize_annotation(a, resolution);
    const std::string id = path.stem().string();
    std::string category = "uncategorized";
    try {
      std::vector<std::string> warnings;
      category = to_string(categorize(a, catalog, &warnings));
      for (const auto& w : warnings) err << "warning: " << id << ": " << w << "\n";
    } catch (const std::exception& e) {
      err << "warning: " << id << ": " << e.what() << "\n";
    }
    std::vector<ConditioningMask> masks;
    if (selection != MaskSelection::FeatureDefect) masks.push_back(background_mask(a, catalog));
    if (selection != MaskSelection::Background) {
      auto fd = feature_defect_masks(a, catalog);
      masks.insert(masks.end(), fd.begin(), fd.end());
    }
    for (auto& m : masks) {
      m.source_id = id;
      m.category = category;
      const bool bg = m.kind == MaskKind::Background;
      const std::string file = id + (bg ? "__background" : "__defect-" + std::to_string(m.defect_class)) + ".pgm";
      write_pgm((fs::path(out_dir) / file).string(), m.to_image());
      index << file << '\t' << (bg ? "background" : "feature-defect") << '\t' << m.defect_class << '\t'
            << (bg ? "-" : catalog.name(m.defect_class)) << '\t' << id << '\t' << category << '\n';
      ++written;
    }
  }
  std::ofstream idx(fs::path(out_dir) / "masks.tsv", std::ios::binary | std::ios::trunc);
  idx << index.str();
  if (!idx) throw std::runtime_error("cannot write mask index in " + out_dir);
  out << "wrote " << written << " masks from " << files.size() << " annotations to " << out_dir << "\n";
  return 0;
}

std::array<double, 3> parse_ratios(const std::string& text) {
  std::array<double, 3> r{};
  std::string s = text;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream is(s);
  for (double& v : r)
    if (!(is >> v)) throw std::invalid_argument("--ratios expects three numbers train,val,test; got '" + text + "'");
  std::string extra;
  if (is >> extra) throw std::invalid_argument("--ratios expects three numbers train,val,test; got '" + text + "'");
  return r;
}

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  const ClassCatalog catalog = catalog_or_standard(o.catalog);
  const DatasetManifest manifest = DatasetManifest::load(o.manifest);
  const MaskSelection selection = parse_mask_selection(o.masks);
  const auto train_pairs = load_pairs(manifest, catalog, Split::Train, selection);
  const auto val_pairs = load_pairs(manifest, catalog, Split::Val, selection);
  if (train_pairs.empty()) throw std::runtime_error("manifest has no train pairs; run 'manifest split' first");
  if (val_pairs.empty()) throw std::runtime_error("manifest has no val pairs");
  err << "pairs: train=" << train_pairs.size() << " val=" << val_pairs.size() << "\n";
  UNetConfig unet;
  unet.image_size = manifest.resolution;
  unet.base_channels = o.model.base_channels;
  unet.channel_multipliers = o.model.channel_multipliers;
  unet.time_embed_dim = o.model.time_embed_dim;
  unet.groups = o.model.groups;
  const TrainResult r =
      train(train_pairs, val_pairs, unet, o.config, cosine_schedule(o.diffusion_steps), logging_hooks(err));
  return finish_training(r, o.out, out, err);
}

int cmd_finetune(const FinetuneOptions& o, std::ostream& out, std::ostream& err) {
  const ClassCatalog catalog = catalog_or_standard(o.catalog);
  const Checkpoint base = load_checkpoint(o.base);
  const DatasetManifest manifest = DatasetManifest::load(o.manifest);
  if (manifest.resolution != base.unet.image_size) {
    throw std::runtime_error("manifest resolution " + std::to_string(manifest.resolution) +
                             " does not match the base model (" + std::to_string(base.unet.image_size) + ")");
  }
  const MaskSelection selection = parse_mask_selection(o.masks);
  const auto train_pairs = load_pairs(manifest, catalog, Split::Train, selection);
  const auto val_pairs = load_pairs(manifest, catalog, Split::Val, selection);
  const TrainResult r = finetune(base, o.category, train_pairs, val_pairs, o.config,
                                 cosine_schedule(base.diffusion_steps), logging_hooks(err));
  return finish_training(r, o.out, out, err);
}

int cmd_sample(const SampleOptions& o, std::ostream& out, std::ostream& err) {
  if (o.per_mask < 1) throw std::invalid_argument("--n must be >= 1");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const std::string ckpt_id = ckpt.id();
  std::vector<fs::path> mask_paths(o.masks.begin(), o.masks.end());
  if (!o.mask_dir.empty()) {
    auto more = list_pgm(o.mask_dir);
    mask_paths.insert(mask_paths.end(), more.begin(), more.end());
  }
  if (mask_paths.empty()) throw std::invalid_argument("no masks given; use --mask or --mask-dir");
  const int s = ckpt.unet.image_size;
  std::vector<Tensor> masks;
  for (const auto& p : mask_paths) {
    GrayImage img = read_pgm(p.string());
    if (img.width != s || img.height != s) {
      err << "resizing mask " << p.string() << " to " << s << "x" << s << "\n";
      img = resize_nearest(img, s, s);
    }
    masks.push_back(Tensor::from_data({1, 1, s, s}, mask_from_image(img).to_floats()));
  }
  ensure_dir(o.out);
  const NoiseSchedule sched = cosine_schedule(ckpt.diffusion_steps);
  const NoisePredictor predictor = make_predictor(ckpt.ema_params, ckpt.unet);
  SamplerOptions sampler;
  sampler.clip_denoised = !o.no_clip;
  const std::vector<Tensor> samples =
      sample_batch(predictor, masks, o.per_mask, sched, RngStream(o.seed), 16, sampler);
  const std::string category = !o.category.empty() ? o.category : (ckpt.category.empty() ? "all" : ckpt.category);
  std::ostringstream sidecar;
  sidecar << "image\tmask\tseed\tstream\tcategory\tcheckpoint\n";
  for (size_t i = 0; i < mask_paths.size(); ++i) {
    for (int j = 0; j < o.per_mask; ++j) {
      const size_t k = i * static_cast<size_t>(o.per_mask) + static_cast<size_t>(j);
      char name[32];
      std::snprintf(name, sizeof name, "_s%03d.pgm", j);
      const std::string file = mask_paths[i].stem().string() + name;
      write_pgm((fs::path(o.out) / file).string(), GrayImage{s, s, to_uint8(samples[k].data())});
      sidecar << file << '\t' << mask_paths[i].string() << '\t' << o.seed << '\t' << k << '\t' << category << '\t'
              << ckpt_id << '\n';
    }
  }
  std::ofstream side(fs::path(o.out) / "samples.tsv", std::ios::binary | std::ios::trunc);
  side << sidecar.str();
  if (!side) throw std::runtime_error("cannot write sidecar in " + o.out);
  out << "wrote " << samples.size() << " samples to " << o.out << "\n";
  return 0;
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name, const std::string& checkpoint) {
  if (name == "flatten") return std::make_unique<FlattenExtractor>();
  if (name == "pooled-denoiser-encoder") {
    if (checkpoint.empty()) throw std::invalid_argument("extractor pooled-denoiser-encoder needs --checkpoint");
    Checkpoint c = load_checkpoint(checkpoint);
    const std::string id = c.id();
    return std::make_unique<PooledDenoiserEncoder>(std::move(c.ema_params), c.unet, id);
  }
  throw std::invalid_argument("unknown extractor '" + name + "' (expected flatten or pooled-denoiser-encoder)");
}

FeatureSet features_of_dir(const std::string& dir, const FeatureExtractor& extractor) {
  std::vector<GrayImage> images;
  std::vector<std::string> ids;
  for (const auto& p : list_pgm(dir)) {
    images.push_back(read_pgm(p.string()));
    ids.push_back(p.string());
  }
  if (images.empty()) throw std::runtime_error("no .pgm images in " + dir);
  return extract_features(images, extractor, ids);
}

void print_metric(std::ostream& out, const std::string& metric, double value, const std::string& uncertainty,
                  const std::string& extractor, const std::string& counts) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", value);
  out << "metric=" << metric << "\tvalue=" << buf << "\tuncertainty=" << uncertainty << "\textractor=" << extractor
      << '\t' << counts << "\n";
}

int cmd_eval_fid(const EvalOptions& o, std::ostream& out) {
  const auto extractor = make_extractor(o.extractor, o.checkpoint);
  const FeatureSet real = features_of_dir(o.real, *extractor);
  const FeatureSet gen = features_of_dir(o.gen, *extractor);
  print_metric(out, "fid", fid(real, gen), "none", extractor->identity(),
               "n_real=" + std::to_string(real.count()) + "\tn_gen=" + std::to_string(gen.count()));
  return 0;
}

int cmd_eval_kid(const EvalOptions& o, std::ostream& out) {
  const auto extractor = make_extractor(o.extractor, o.checkpoint);
  const FeatureSet real = features_of_dir(o.real, *extractor);
  const FeatureSet gen = features_of_dir(o.gen, *extractor);
  const int subset = o.subset_size > 0 ? o.subset_size : default_kid_subset_size(real, gen);
  RngStream rng = RngStream(o.seed).substream("kid");
  const KidResult r = kid(real, gen, subset, o.n_subsets, rng);
  char unc[64];
  std::snprintf(unc, sizeof unc, "%.10g", r.std);
  print_metric(out, "kid", r.mean, std::string("std:") + unc, extractor->identity(),
               "n_real=" + std::to_string(real.count()) + "\tn_gen=" + std::to_string(gen.count()) +
                   "\tsubset_size=" + std::to_string(r.subset_size) + "\tn_subsets=" + std::to_string(r.n_subsets));
  return 0;
}

template <typename T>
std::vector<T> read_numbers(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<T> v;
  T x;
  while (in >> x) v.push_back(x);
  if (!in.eof()) throw std::runtime_error(path + ": non-numeric entry after " + std::to_string(v.size()) + " values");
  return v;
}

int cmd_eval_ad(const std::string& scores_path, const std::string& labels_path, std::ostream& out) {
  const auto scores = read_numbers<double>(scores_path);
  const auto labels = read_numbers<int>(labels_path);
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  const std::string counts =
      "n_positive=" + std::to_string(pos) + "\tn_negative=" + std::to_string(static_cast<long>(labels.size()) - pos);
  const double roc = auroc(scores, labels);
  const double ap = average_precision(scores, labels);
  print_metric(out, "auroc", roc, "none", "none", counts);
  print_metric(out, "average_precision", ap, "none", "none", counts);
  return 0;
}

int cmd_schedule_dump(int steps, double offset, const std::string& out_path, std::ostream& out) {
  const NoiseSchedule sched = cosine_schedule(steps, offset);
  if (out_path.empty()) {
    sched.write_table(out);
  } else {
    std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + out_path);
    sched.write_table(f);
  }
  return 0;
}

// Deepest parsed subcommand.
CLI::App* leaf_command(CLI::App* app) {
  for (CLI::App* sub : app->get_subcommands())
    if (sub->parsed()) return leaf_command(sub);
  return app;
}

std::string command_path(const CLI::App* app) {
  std::string path;
  for (const CLI::App* a = app; a != nullptr && a->get_parent() != nullptr; a = a->get_parent())
    path = a->get_name() + (path.empty() ? "" : " " + path);
  return path;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mask-conditioned diffusion for electroluminescence cell images", "maskdiff"};
  app.set_config("--config", "", "key=value configuration file; command-line flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();

  auto* toyset = app.add_subcommand("toyset", "Procedural toy dataset")->require_subcommand(1);
  auto* toy_gen = toyset->add_subcommand("generate", "Write toy images, annotations and catalog");
  std::string toy_out;
  int toy_n = 64;
  uint64_t toy_seed = 0;
  toy_gen->add_option("--out", toy_out, "Output directory")->required();
  toy_gen->add_option("--n", toy_n, "Number of images")->capture_default_str();
  toy_gen->add_option("--seed", toy_seed, "Generator seed")->capture_default_str();

  auto* masks = app.add_subcommand("masks", "Conditioning masks")->require_subcommand(1);
  auto* masks_build = masks->add_subcommand("build", "Derive background / feature-defect masks from annotations");
  std::string masks_ann, masks_catalog, masks_out, masks_kind = "all";
  int masks_resolution = 0;
  masks_build->add_option("--annotations", masks_ann, "Annotation directory (*.pgm)")->required();
  masks_build->add_option("--catalog", masks_catalog, "Class catalog (default: built-in)");
  masks_build->add_option("--out", masks_out, "Output directory")->required();
  masks_build->add_option("--kind", masks_kind, "all | background | feature-defect")->capture_default_str();
  masks_build->add_option("--resolution", masks_resolution, "Resize annotations first (0 = keep)")->capture_default_str();

  auto* manifest = app.add_subcommand("manifest", "Dataset manifest")->require_subcommand(1);
  auto* man_build = manifest->add_subcommand("build", "Scan images and annotations into a manifest");
  std::string man_images, man_ann, man_pairs, man_catalog, man_out;
  int man_resolution = 32;
  man_build->add_option("--images", man_images, "Image directory (*.pgm)")->required();
  man_build->add_option("--annotations", man_ann, "Annotation directory (*.pgm)")->required();
  man_build->add_option("--pairs", man_pairs, "Pairing table: 'synthetic_id real_id' per line");
  man_build->add_option("--catalog", man_catalog, "Class catalog (default: built-in)");
  man_build->add_option("--resolution", man_resolution, "Training resolution")->capture_default_str();
  man_build->add_option("--out", man_out, "Output manifest path")->required();
  auto* man_split = manifest->add_subcommand("split", "Assign stratified train/val/test splits");
  std::string split_in, split_out, split_ratios = "0.8,0.1,0.1";
  uint64_t split_seed = 0;
  int split_resolution = 0;
  man_split->add_option("--manifest", split_in, "Input manifest")->required();
  man_split->add_option("--out", split_out, "Output manifest path")->required();
  man_split->add_option("--ratios", split_ratios, "train,val,test")->capture_default_str();
  man_split->add_option("--seed", split_seed, "Shuffle seed")->capture_default_str();
  man_split->add_option("--resolution", split_resolution, "Override the recorded resolution (0 = keep)")
      ->capture_default_str();

  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train the denoiser on a split manifest");
  train_cmd->add_option("--manifest", train_opts.manifest, "Split manifest")->required();
  train_cmd->add_option("--catalog", train_opts.catalog, "Class catalog (default: built-in)");
  train_cmd->add_option("--out", train_opts.out, "Checkpoint directory")->required();
  train_cmd->add_option("--masks", train_opts.masks, "all | background | feature-defect")->capture_default_str();
  train_cmd->add_option("--steps", train_opts.diffusion_steps, "Diffusion chain length T")->capture_default_str();
  train_cmd->add_option("--base-channels", train_opts.model.base_channels, "U-Net base width")->capture_default_str();
  train_cmd->add_option("--channel-mults", train_opts.model.channel_multipliers, "Per-level width multipliers")
      ->delimiter(',')
      ->capture_default_str();
  train_cmd->add_option("--time-embed-dim", train_opts.model.time_embed_dim, "Timestep embedding width")
      ->capture_default_str();
  train_cmd->add_option("--groups", train_opts.model.groups, "GroupNorm groups")->capture_default_str();
  add_train_config_flags(train_cmd, train_opts.config);

  FinetuneOptions ft_opts;
  auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune a checkpoint on one cell category");
  ft_cmd->add_option("--base", ft_opts.base, "Base checkpoint directory")->required();
  ft_cmd->add_option("--category", ft_opts.category, "mono | multi | multi_halfcut | dogbone | mono_halfcut")
      ->required();
  ft_cmd->add_option("--manifest", ft_opts.manifest, "Split manifest")->required();
  ft_cmd->add_option("--catalog", ft_opts.catalog, "Class catalog (default: built-in)");
  ft_cmd->add_option("--out", ft_opts.out, "Checkpoint directory")->required();
  ft_cmd->add_option("--masks", ft_opts.masks, "all | background | feature-defect")->capture_default_str();
  add_train_config_flags(ft_cmd, ft_opts.config);

  SampleOptions sample_opts;
  auto* sample_cmd = app.add_subcommand("sample", "Generate images from conditioning masks");
  sample_cmd->add_option("--checkpoint", sample_opts.checkpoint, "Checkpoint directory")->required();
  sample_cmd->add_option("--mask", sample_opts.masks, "Mask image (repeatable)");
  sample_cmd->add_option("--mask-dir", sample_opts.mask_dir, "Directory of mask images");
  sample_cmd->add_option("--out", sample_opts.out, "Output directory")->required();
  sample_cmd->add_option("--n", sample_opts.per_mask, "Samples per mask")->capture_default_str();
  sample_cmd->add_option("--seed", sample_opts.seed, "Sampling seed")->capture_default_str();
  sample_cmd->add_option("--category", sample_opts.category, "Category recorded in the sidecar");
  sample_cmd->add_flag("--no-clip-denoised", sample_opts.no_clip,
                       "Use the raw noise prediction instead of clipping the implied clean image");

  auto* eval = app.add_subcommand("eval", "Evaluation metrics")->require_subcommand(1);
  EvalOptions eval_opts;
  auto add_feature_flags = [&](CLI::App* cmd) {
    cmd->add_option("--real", eval_opts.real, "Directory of reference images")->required();
    cmd->add_option("--gen", eval_opts.gen, "Directory of generated images")->required();
    cmd->add_option("--extractor", eval_opts.extractor, "flatten | pooled-denoiser-encoder")->capture_default_str();
    cmd->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint for the pooled-denoiser-encoder extractor");
  };
  auto* eval_fid = eval->add_subcommand("fid", "Frechet distance between feature Gaussians");
  add_feature_flags(eval_fid);
  auto* eval_kid = eval->add_subcommand("kid", "Kernel distance with subset uncertainty");
  add_feature_flags(eval_kid);
  eval_kid->add_option("--subset-size", eval_opts.subset_size, "Rows per subset (0 = min(N, 100))")
      ->capture_default_str();
  eval_kid->add_option("--n-subsets", eval_opts.n_subsets, "Number of subsets")->capture_default_str();
  eval_kid->add_option("--seed", eval_opts.seed, "Subset sampling seed")->capture_default_str();
  auto* eval_ad = eval->add_subcommand("ad", "AUROC and average precision of anomaly scores");
  std::string ad_scores, ad_labels;
  eval_ad->add_option("--scores", ad_scores, "Whitespace-separated scores")->required();
  eval_ad->add_option("--labels", ad_labels, "Whitespace-separated 0/1 labels")->required();

  auto* schedule = app.add_subcommand("schedule", "Noise schedule")->require_subcommand(1);
  auto* sched_dump = schedule->add_subcommand("dump", "Print t, beta, alpha_bar, posterior_variance");
  int sched_steps = 1000;
  double sched_offset = 0.008;
  std::string sched_out;
  sched_dump->add_option("--steps", sched_steps, "Chain length T")->capture_default_str();
  sched_dump->add_option("--offset", sched_offset, "Cosine offset s")->capture_default_str();
  sched_dump->add_option("--out", sched_out, "Output file (default: stdout)");

  if (args.empty()) {
    err << app.help();
    return 2;
  }
  if (args[0].empty() || args[0][0] != '-') {
    bool known = false;
    for (const CLI::App* sub : app.get_subcommands({})) known = known || sub->check_name(args[0]);
    if (!known) {
      err << "error: unknown command '" << args[0] << "'\n\n" << app.help();
      return 2;
    }
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << leaf_command(&app)->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << leaf_command(&app)->help();
    return 2;
  }

  CLI::App* leaf = leaf_command(&app);
  err << "# resolved configuration: " << command_path(leaf) << "\n" << leaf->config_to_str(true, false);
  err.flush();

  try {
    if (toy_gen->parsed()) return cmd_toyset(toy_out, toy_n, toy_seed, out);
    if (masks_build->parsed())
      return cmd_masks_build(masks_ann, masks_catalog, masks_out, masks_kind, masks_resolution, out, err);
    if (man_build->parsed()) {
      const ClassCatalog catalog = catalog_or_standard(man_catalog);
      build_manifest(man_images, man_ann, man_pairs, catalog, man_resolution).save(man_out);
      out << "wrote manifest " << man_out << "\n";
      return 0;
    }
    if (man_split->parsed()) {
      DatasetManifest m = split_manifest(DatasetManifest::load(split_in), parse_ratios(split_ratios), split_seed);
      if (split_resolution > 0) m.resolution = split_resolution;
      m.save(split_out);
      out << "wrote manifest " << split_out << "\n";
      return 0;
    }
    if (train_cmd->parsed()) return cmd_train(train_opts, out, err);
    if (ft_cmd->parsed()) return cmd_finetune(ft_opts, out, err);
    if (sample_cmd->parsed()) return cmd_sample(sample_opts, out, err);
    if (eval_fid->parsed()) return cmd_eval_fid(eval_opts, out);
    if (eval_kid->parsed()) return cmd_eval_kid(eval_opts, out);
    if (eval_ad->parsed()) return cmd_eval_ad(ad_scores, ad_labels, out);
    if (sched_dump->parsed()) return cmd_schedule_dump(sched_steps, sched_offset, sched_out, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace maskdiff::cli
