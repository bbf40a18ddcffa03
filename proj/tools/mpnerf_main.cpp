// mpnerf: dataset generation, training, rendering, evaluation and gradient
// verification behind one binary.
//
// Exit codes: 0 success, 2 usage/config error, 3 numeric abort, 4 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpnerf/evaluation.hpp"
#include "mpnerf/gradcheck.hpp"
#include "mpnerf/image_io.hpp"
#include "mpnerf/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mpnerf;

namespace {

constexpr char kVersion[] = "0.1.0";

// Reproducibility stamp beside every command's outputs. Deliberately free of
// timestamps so identical runs stay byte-identical.
void write_stamp(const fs::path& dir, json extra) {
  extra["tool"] = "mpnerf";
  extra["version"] = kVersion;
  fs::create_directories(dir);
  std::ofstream out(dir / "stamp.json");
  if (!out) throw IoError("cannot write stamp in " + dir.string());
  out << extra.dump(2) << "\n";
}

std::pair<int, int> parse_size(const std::string& s) {
  auto x = s.find('x');
  if (x == std::string::npos || x == 0 || x + 1 == s.size())
    throw ConfigError("--size expects WxH, got '" + s + "'");
  try {
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError("--size expects WxH, got '" + s + "'");
  }
}

train::TrainConfig load_train_config(const std::string& config_path,
                                     const std::vector<std::string>& overrides,
                                     bool deterministic_flag) {
  auto kv = train::parse_config_file(config_path);
  train::apply_overrides(kv, overrides);
  if (deterministic_flag) kv["deterministic"] = "true";
  return train::TrainConfig::from_map(kv);
}

std::vector<geo::RigidTransform> parse_pose_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pose file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("pose file " + path + ": " + e.what());
  }
  const json& rows = j.is_object() && j.contains("frames") ? j["frames"] : j;
  if (!rows.is_array() || rows.empty())
    throw ConfigError("pose file " + path + ": expected an array of 3x4 rows");
  std::vector<geo::RigidTransform> poses;
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != 12)
      throw ConfigError("pose file " + path + ": each pose needs 12 numbers (row-major 3x4)");
    geo::RigidTransform p;
    for (int i = 0; i < 3; ++i) {
      for (int j2 = 0; j2 < 3; ++j2) p.rotation(i, j2) = row[4 * i + j2].get<double>();
      p.translation(i) = row[4 * i + 3].get<double>();
    }
    p.validate();
    poses.push_back(p);
  }
  return poses;
}

int cmd_gen(const std::string& out, int clips, uint64_t seed, int layers,
            const std::string& size, int frames) {
  synth::DatasetConfig cfg;
  cfg.seed = seed;
  cfg.clips = clips;
  cfg.scene.layers = layers;
  std::tie(cfg.scene.width, cfg.scene.height) = parse_size(size);
  cfg.trajectory.frames = frames;
  if (clips < 1) throw ConfigError("--clips must be >= 1");
  cfg.scene.validate();
  cfg.trajectory.validate();

  synth::write_dataset(out, cfg);
  auto ds = synth::Dataset::open(out);
  write_stamp(out, {{"command", "gen"},
                    {"seed", seed},
                    {"clips", clips},
                    {"layers", layers},
                    {"width", ds.width()},
                    {"height", ds.height()},
                    {"frames_per_clip", ds.frames_per_clip()}});
  std::printf("wrote %d clips (%dx%d, %d frames each) to %s\n", ds.size(), ds.width(),
              ds.height(), ds.frames_per_clip(), out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& out, bool deterministic, const std::string& resume,
              const std::vector<std::string>& overrides) {
  auto cfg = load_train_config(config_path, overrides, deterministic);
  auto ds = synth::Dataset::open(data);
  train::Trainer trainer(cfg);
  if (!resume.empty()) trainer.restore(resume);
  write_stamp(out, {{"command", "train"},
                    {"seed", cfg.seed},
                    {"deterministic", cfg.deterministic},
                    {"config_hash", cfg.hash()},
                    {"config", cfg.canonical()},
                    {"data", data}});
  trainer.fit(ds, out);
  std::printf("finished at step %ld (epoch %d); checkpoint in %s\n", trainer.step(),
              trainer.epoch(), out.c_str());
  return 0;
}

int cmd_render(const std::string& checkpoint, const std::string& image_path,
               const std::string& poses_path, const std::string& out,
               const std::string& convention) {
  if (convention != "target_to_source" && convention != "source_to_target")
    throw ConfigError("--convention must be target_to_source or source_to_target");
  net::ParamStore store(0);
  auto meta = train::load_checkpoint(checkpoint, store);
  if (meta.config_text.empty())
    throw ConfigError("checkpoint carries no config text; cannot rebuild networks");
  auto cfg = train::TrainConfig::from_canonical(meta.config_text);

  auto img8 = io::read_png(image_path);
  if (img8.width % 4 || img8.height % 4)
    throw ConfigError("render: image dimensions must be divisible by 4");
  auto chw = io::to_chw(img8);
  auto poses = parse_pose_file(poses_path);

  geo::Intrinsics k;
  k.width = img8.width;
  k.height = img8.height;
  k.fx = k.fy = 0.9 * img8.width;
  k.cx = 0.5 * (img8.width - 1);
  k.cy = 0.5 * (img8.height - 1);

  ad::Graph<float> g;
  net::Binder<float> b(g, store);
  auto spec = cfg.network_spec();
  net::DepthEncoder<float> de(spec);
  net::MpiDecoder<float> dec(spec);
  auto enc = train::encode_field(b, de, dec, cfg, g.leaf({1, 3, k.height, k.width}, chw));

  fs::create_directories(out);
  for (size_t i = 0; i < poses.size(); ++i) {
    geo::RigidTransform tgt_to_src =
        convention == "target_to_source" ? poses[i] : poses[i].inverse();
    auto pose = geo::pose_constant<float>(g, tgt_to_src);
    auto render = mpi::render_nerf(enc.field, std::optional{pose}, k, k, cfg.delta());

    char name[64];
    std::snprintf(name, sizeof(name), "view_%03zu.png", i);
    io::write_png((fs::path(out) / name).string(),
                  io::to_image8(render.image.values(), k.height, k.width));
    std::snprintf(name, sizeof(name), "disparity_%03zu.pfm", i);
    io::write_pfm((fs::path(out) / name).string(),
                  {k.width, k.height, render.disparity.values()});
    std::snprintf(name, sizeof(name), "accumulation_%03zu.pfm", i);
    io::write_pfm((fs::path(out) / name).string(),
                  {k.width, k.height, render.accumulation.values()});
  }
  write_stamp(out, {{"command", "render"},
                    {"config_hash", cfg.hash()},
                    {"checkpoint", checkpoint},
                    {"image", image_path},
                    {"poses", poses.size()},
                    {"convention", convention}});
  std::printf("rendered %zu poses to %s\n", poses.size(), out.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data,
             const std::string& task, const std::string& out) {
  auto ds = synth::Dataset::open(data);
  auto summary = eval::evaluate_run(checkpoint, ds, task, out);
  write_stamp(out, {{"command", "eval"},
                    {"config_hash", summary.config_hash},
                    {"checkpoint", checkpoint},
                    {"task", task},
                    {"clips", summary.clips}});
  if (task == "depth")
    std::printf("depth over %d clips: abs_rel=%.4f rmse=%.4f delta1=%.4f\n", summary.clips,
                summary.depth.abs_rel, summary.depth.rmse, summary.depth.delta1);
  else if (task == "nvs")
    std::printf("nvs over %d clips: psnr=%.2f dB ssim=%.4f\n", summary.clips, summary.psnr,
                summary.ssim);
  else
    std::printf("pose over %d clips: ate_rmse=%.5f ate_max=%.5f\n", summary.clips,
                summary.ate.rmse, summary.ate.max);
  return 0;
}

int cmd_gradcheck(const std::string& ops, double tol, int instances, uint64_t seed) {
  auto all = gradcheck::standard_checks();
  std::vector<gradcheck::OpCheck> selected;
  if (ops == "all") {
    selected = all;
  } else {
    for (const auto& c : all)
      if (c.name == ops) selected.push_back(c);
    if (selected.empty()) throw ConfigError("gradcheck: unknown op '" + ops + "'");
  }
  auto reports = gradcheck::run_checks(selected, tol, instances, seed);
  bool all_pass = true;
  std::printf("%-28s %10s %12s  %s\n", "op", "instances", "max_err", "status");
  for (const auto& r : reports) {
    std::printf("%-28s %10d %12.3e  %s\n", r.name.c_str(), r.instances, r.max_err,
                r.pass ? "PASS" : "FAIL");
    all_pass &= r.pass;
  }
  if (!all_pass) {
    std::fprintf(stderr, "gradcheck: failures above tolerance %g\n", tol);
    return 3;
  }
  return 0;
}

int cmd_inspect(const std::string& checkpoint, const std::string& data) {
  if (checkpoint.empty() && data.empty())
    throw ConfigError("inspect: pass --checkpoint and/or --data");
  if (!checkpoint.empty()) {
    net::ParamStore store(0);
    auto meta = train::load_checkpoint(checkpoint, store);
    long total = 0;
    for (const auto& [name, p] : store.params()) total += static_cast<long>(p.value.size());
    std::printf("checkpoint %s\n", checkpoint.c_str());
    std::printf("  version      %d\n", meta.version);
    std::printf("  step         %ld\n", meta.step);
    std::printf("  epoch        %d\n", meta.epoch);
    std::printf("  adam_t       %ld\n", meta.adam_t);
    std::printf("  config_hash  %llu\n", static_cast<unsigned long long>(meta.config_hash));
    std::printf("  params       %zu arrays, %ld scalars\n", store.params().size(), total);
    for (const auto& [name, p] : store.params()) {
      std::string shape;
      for (size_t i = 0; i < p.shape.size(); ++i)
        shape += (i ? "x" : "") + std::to_string(p.shape[i]);
      std::printf("    %-24s %s\n", name.c_str(), shape.c_str());
    }
  }
  if (!data.empty()) {
    auto ds = synth::Dataset::open(data);
    std::printf("dataset %s\n", data.c_str());
    std::printf("  clips            %d\n", ds.size());
    std::printf("  resolution       %dx%d\n", ds.width(), ds.height());
    std::printf("  frames_per_clip  %d\n", ds.frames_per_clip());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiplane NeRF from a single video: data, training, rendering, metrics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  auto* gen = app.add_subcommand("gen", "generate a synthetic layered-scene dataset");
  std::string gen_out, gen_size = "64x64";
  int gen_clips = 8, gen_layers = 3, gen_frames = 3;
  uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--clips", gen_clips, "number of clips");
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--layers", gen_layers, "scene layers (1-4)");
  gen->add_option("--size", gen_size, "image size WxH");
  gen->add_option("--frames", gen_frames, "frames per clip");

  auto* tr = app.add_subcommand("train", "train on a dataset");
  std::string tr_config, tr_data, tr_out, tr_resume;
  bool tr_det = false;
  std::vector<std::string> tr_set;
  tr->add_option("--config", tr_config, "key=value config file")->required();
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  tr->add_flag("--deterministic", tr_det, "single-threaded bit-exact mode");
  tr->add_option("--set", tr_set, "config override key=value (repeatable)");

  auto* rd = app.add_subcommand("render", "render novel views from one image");
  std::string rd_ckpt, rd_image, rd_poses, rd_out, rd_conv = "target_to_source";
  rd->add_option("--checkpoint", rd_ckpt, "trained checkpoint")->required();
  rd->add_option("--image", rd_image, "source PNG")->required();
  rd->add_option("--poses", rd_poses, "JSON file of row-major 3x4 poses")->required();
  rd->add_option("--out", rd_out, "output directory")->required();
  rd->add_option("--convention", rd_conv, "target_to_source | source_to_target");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_task, ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "trained checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--task", ev_task, "depth | pose | nvs")->required();
  ev->add_option("--out", ev_out, "report directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of all primitives");
  std::string gc_ops = "all";
  double gc_tol = 1e-4;
  int gc_instances = 20;
  uint64_t gc_seed = 12345;
  gc->add_option("--ops", gc_ops, "all or one op name");
  gc->add_option("--tol", gc_tol, "relative tolerance");
  gc->add_option("--instances", gc_instances, "random instances per op");
  gc->add_option("--seed", gc_seed, "rng seed");

  auto* in = app.add_subcommand("inspect", "describe a checkpoint or dataset");
  std::string in_ckpt, in_data;
  in->add_option("--checkpoint", in_ckpt, "checkpoint file");
  in->add_option("--data", in_data, "dataset directory");

  try {
    app.parse(argc, argv);
    if (*gen) return cmd_gen(gen_out, gen_clips, gen_seed, gen_layers, gen_size, gen_frames);
    if (*tr) return cmd_train(tr_config, tr_data, tr_out, tr_det, tr_resume, tr_set);
    if (*rd) return cmd_render(rd_ckpt, rd_image, rd_poses, rd_out, rd_conv);
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_task, ev_out);
    if (*gc) return cmd_gradcheck(gc_ops, gc_tol, gc_instances, gc_seed);
    if (*in) return cmd_inspect(in_ckpt, in_data);
    return 2;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const InvariantError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric abort: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 4;
  }
}
