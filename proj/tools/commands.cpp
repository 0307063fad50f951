/*
 * Copyright 2026 The cmrsynth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "cmr/io/subject_io.hpp"
#include "cmr/latent/bundle.hpp"
#include "cmr/latent/embedding.hpp"
#include "cmr/latent/latent.hpp"
#include "cmr/phantom.hpp"
#include "cmr/preprocess.hpp"
#include "pipeline.hpp"

namespace cmr::cli {
namespace {

using nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::string> config_file;
  std::optional<std::string> out_root;
  std::optional<std::uint64_t> seed;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
};

struct Context {
  PipelineConfig config;
  int jobs = 1;
  std::ostream& out;
};

PipelineConfig resolve_config(const Globals& g) {
  json file = json::object();
  if (g.config_file) {
    std::ifstream in(*g.config_file);
    if (!in) throw ConfigError("config file not found: " + *g.config_file);
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + *g.config_file + ": " + e.what());
    }
  }
  PipelineConfig c;
  try {
    c = pipeline_config_from_json(file);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (const char* env = std::getenv("CMRSYNTH_OUT"); env && *env) c.output_root = env;
  if (g.out_root) c.output_root = *g.out_root;
  if (g.seed) c.seed = *g.seed;
  // One seed drives every stage.
  c.vae.seed = c.gan.seed = c.segmentation.seed = c.seed;
  return c;
}

void validate(const PipelineConfig& c) {
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

template <typename F>
auto config_value(F&& parse) {
  try {
    return parse();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) throw ConfigError(what + ": no such directory " + p.string());
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ConfigError(what + ": no such file " + p.string());
}

fs::path dir_name(const fs::path& dir) {
  const auto n = dir.lexically_normal();
  return n.has_filename() ? n.filename() : n.parent_path().filename();
}

bool all_current(std::initializer_list<fs::path> artifacts, const Provenance& prov) {
  return std::all_of(artifacts.begin(), artifacts.end(), [&](const fs::path& a) { return artifact_current(a, prov); });
}

bool subject_current(const fs::path& dir, const std::string& id, const Provenance& prov) {
  return all_current({io::image_path(dir, id), io::label_path(dir, id)}, prov);
}

void emit_subject(const fs::path& dir, const Subject& s, const Provenance& prov) {
  io::save_subject(s, dir);
  write_sidecar(io::image_path(dir, s.meta.subject_id), prov);
  if (!s.labels.empty()) write_sidecar(io::label_path(dir, s.meta.subject_id), prov);
}

void emit_manifest(const fs::path& dir, const std::vector<io::ManifestEntry>& entries, const Provenance& prov) {
  write_dataset_manifest(dir, entries);
  write_sidecar(dir / kManifestName, prov);
}

void report(std::ostream& out, const std::string& stage, int written, int current, const fs::path& dir) {
  out << stage << ": " << written << " written, " << current << " up to date in " << dir.string() << "\n";
}

// Per-subject geometry of a latent directory (the latent files carry codes only).
constexpr const char* kGeometryName = "geometry.json";

json spacing_json(const Spacing& s) { return {s.row_mm, s.col_mm, s.slice_mm}; }

Spacing spacing_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

json read_geometry(const fs::path& dir) {
  std::ifstream in(dir / kGeometryName);
  if (!in) throw MissingFileError("latent directory has no " + std::string(kGeometryName) + ": " + dir.string());
  return json::parse(in);
}

fs::path latent_file(const fs::path& dir, const std::string& id) { return dir / (id + ".latent"); }

Subject decoded_subject(Vae& vae, const latent::LatentSubject& ls, const SubjectMeta& meta, const Spacing& spacing) {
  Subject s;
  s.labels = latent::decode_subject(vae, ls);
  s.image = ImageVolume(s.labels.slices(), s.labels.rows(), s.labels.cols());
  s.spacing = spacing;
  s.meta = meta;
  return s;
}

Spacing rescale_slices(Spacing s, Eigen::Index from, Eigen::Index to) {
  if (to > 1 && from > 1) s.slice_mm *= static_cast<double>(from - 1) / static_cast<double>(to - 1);
  return s;
}

std::uint64_t derived_seed(std::uint64_t seed, const std::string& tag) {
  return std::stoull(sha1_hex(std::to_string(seed) + "/" + tag).substr(0, 16), nullptr, 16);
}

// ---------------------------------------------------------------- phantom

struct PhantomOptions {
  std::string preset;
  int count = 10;
  double severity = 1.0;
  std::string vendor = "A";
  std::string phase = "ED";
  std::string id_prefix = "ph_";
  std::optional<std::string> out;
};

void cmd_phantom(const PhantomOptions& o, Context& ctx) {
  const Pathology p = config_value([&] { return parse_pathology(o.preset); });
  const Phase phase = config_value([&] { return parse_phase(o.phase); });
  if (o.count < 1) throw ConfigError("--count must be positive");
  if (!(o.severity >= 0.0)) throw ConfigError("--severity must be non-negative");
  if (o.vendor != "A" && o.vendor != "B") throw ConfigError("--vendor must be A or B");
  validate(ctx.config);
  const fs::path dir = o.out ? fs::path(*o.out) : ctx.config.output_root / "phantoms" / std::string(to_string(p));

  auto params = cohort_params({p, o.count, ctx.config.seed, o.severity, o.vendor, o.id_prefix});
  for (auto& pp : params) pp.phase = phase;
  std::vector<io::ManifestEntry> entries;
  std::atomic<int> written{0};
  auto prov_for = [&](std::size_t i) {
    Provenance prov{"phantom",
                    {{"preset", std::string(to_string(p))}, {"severity", o.severity}, {"vendor", o.vendor},
                     {"phase", o.phase}, {"index", i}},
                    ctx.config.seed, {}};
    return prov;
  };
  parallel_for(params.size(), ctx.jobs, [&](std::size_t i) {
    const auto prov = prov_for(i);
    if (subject_current(dir, params[i].subject_id, prov)) return;
    emit_subject(dir, generate_phantom(params[i]), prov);
    ++written;
  });
  for (const auto& pp : params) entries.push_back({pp.subject_id, pp.pathology, pp.vendor, pp.phase});
  Provenance mprov{"phantom", {{"preset", std::string(to_string(p))}, {"count", o.count}, {"severity", o.severity},
                                {"vendor", o.vendor}, {"phase", o.phase}}, ctx.config.seed, {}};
  emit_manifest(dir, entries, mprov);
  report(ctx.out, "phantom", written, o.count - written, dir);
}

// ------------------------------------------------------------- preprocess

struct PreprocessCliOptions {
  std::string in;
  std::optional<std::string> out;
  PreprocessOptions options;
};

void cmd_preprocess(const PreprocessCliOptions& o, Context& ctx) {
  require_dir(o.in, "--in");
  if (!(o.options.target_mm > 0.0) || o.options.size_px < 1) throw ConfigError("preprocess: invalid geometry options");
  if (!(o.options.lo_pct >= 0.0 && o.options.lo_pct < o.options.hi_pct && o.options.hi_pct <= 100.0)) {
    throw ConfigError("preprocess: percentiles must satisfy 0 <= lo < hi <= 100");
  }
  validate(ctx.config);
  const fs::path dir = o.out ? fs::path(*o.out) : ctx.config.output_root / "preprocessed" / dir_name(o.in);
  const auto entries = read_dataset_manifest(o.in);
  const json cfg{{"target_mm", o.options.target_mm}, {"size_px", o.options.size_px},
                 {"lo_pct", o.options.lo_pct}, {"hi_pct", o.options.hi_pct}};
  std::atomic<int> written{0};
  parallel_for(entries.size(), ctx.jobs, [&](std::size_t i) {
    const auto& id = entries[i].subject_id;
    Provenance prov{"preprocess", cfg, ctx.config.seed, {}};
    prov.add_input(io::image_path(o.in, id));
    if (fs::exists(io::label_path(o.in, id))) prov.add_input(io::label_path(o.in, id));
    if (subject_current(dir, id, prov)) return;
    emit_subject(dir, preprocess(io::load_subject(io::image_path(o.in, id)), o.options), prov);
    ++written;
  });
  Provenance mprov{"preprocess", cfg, ctx.config.seed, {}};
  mprov.add_input(fs::path(o.in) / kManifestName);
  emit_manifest(dir, entries, mprov);
  report(ctx.out, "preprocess", written, static_cast<int>(entries.size()) - written, dir);
}

// -------------------------------------------------------------- train-vae

struct TrainVaeOptions {
  std::vector<std::string> data;
  std::optional<std::string> out;
  std::optional<int> epochs, batch_size;
  std::optional<double> learning_rate;
};

void cmd_train_vae(const TrainVaeOptions& o, Context& ctx) {
  for (const auto& d : o.data) require_dir(d, "--data");
  auto& cfg = ctx.config.vae;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.learning_rate) cfg.learning_rate = *o.learning_rate;
  validate(ctx.config);
  const fs::path dir = o.out ? fs::path(*o.out) : ctx.config.output_root / "vae";
  const fs::path ckpt = dir / "vae.ckpt", log = dir / "vae_log.csv";
  Provenance prov{"train-vae", to_json(cfg), ctx.config.seed, {}};
  for (const auto& d : o.data) prov.add_input_dir(d);
  if (all_current({ckpt, log}, prov)) {
    ctx.out << "train-vae: up to date " << ckpt.string() << "\n";
    return;
  }
  std::vector<OneHotLabelMap> maps;
  for (const auto& d : o.data) {
    for (const auto& s : load_dataset(d).subjects) {
      if (s.labels.rows() != cfg.input_size || s.labels.cols() != cfg.input_size) {
        throw InvalidArgumentError("subject " + s.meta.subject_id + " is not " + std::to_string(cfg.input_size) +
                                   " px square; run preprocess first");
      }
      for (int k = 0; k < s.labels.slices(); ++k) maps.push_back(one_hot(s.labels, k));
    }
  }
  auto trained = train_vae(maps, cfg, [&](const VaeEpochRecord& r) {
    ctx.out << "train-vae: epoch " << r.epoch << " ce " << r.ce << " kld " << r.kld << " val_ce " << r.val_ce << "\n";
  });
  save_vae(ckpt, *trained.model);
  write_vae_log(log, trained.log);
  write_sidecar(ckpt, prov);
  write_sidecar(log, prov);
  ctx.out << "train-vae: wrote " << ckpt.string() << " (" << maps.size() << " slices)\n";
}

// ----------------------------------------------------------------- encode

struct EncodeOptions {
  std::string model, data;
  std::optional<std::string> out;
};

void cmd_encode(const EncodeOptions& o, Context& ctx) {
  require_file(o.model, "--model");
  require_dir(o.data, "--data");
  validate(ctx.config);
  const fs::path dir = o.out ? fs::path(*o.out) : ctx.config.output_root / "latents" / dir_name(o.data);
  const auto entries = read_dataset_manifest(o.data);
  auto vae = load_vae(o.model);
  const auto model_hash = file_blob_sha1(o.model);
  json geometry = json::object();
  int written = 0;
  for (const auto& e : entries) {
    const fs::path labels = io::label_path(o.data, e.subject_id);
    Provenance prov{"encode", json::object(), ctx.config.seed, {{fs::path(o.model).lexically_normal().string(), model_hash}}};
    prov.add_input(labels);
    const Subject s = io::load_subject(io::image_path(o.data, e.subject_id));
    geometry[e.subject_id] = spacing_json(s.spacing);
    const fs::path out = latent_file(dir, e.subject_id);
    if (artifact_current(out, prov)) continue;
    fs::create_directories(dir);
    latent::save_latent_subject(out, latent::encode_subject(*vae, s));
    write_sidecar(out, prov);
    ++written;
  }
  Provenance mprov{"encode", json::object(), ctx.config.seed, {}};
  mprov.add_input(fs::path(o.data) / kManifestName);
  emit_manifest(dir, entries, mprov);
  write_text(dir / kGeometryName, geometry.dump(2) + "\n");
  report(ctx.out, "encode", written, static_cast<int>(entries.size()) - written, dir);
}

// ------------------------------------------------------------ synth-intra

struct SynthIntraOptions {
  std::string model, latents;
  std::optional<std::string> subject, out;
  std::optional<int> n_target;
};

void cmd_synth_intra(const SynthIntraOptions& o, Context& ctx) {
  require_file(o.model, "--model");
  require_dir(o.latents, "--latents");
  if (o.n_target) ctx.config.synthesis.n_target = *o.n_target;
  validate(ctx.config);
  const int n_target = ctx.config.synthesis.n_target;
  const fs::path dir = o.out ? fs::path(*o.out) : ctx.config.output_root / "intra" / dir_name(o.latents);
  auto entries = read_dataset_manifest(o.latents);
  if (o.subject) {
    std::erase_if(entries, [&](const io::ManifestEntry& e) { return e.subject_id != *o.subject; });
    if (entries.empty()) throw ConfigError("--subject " + *o.subject + " is not in " + o.latents);
  }
  const json geometry = read_geometry(o.latents);
  auto vae = load_vae(o.model);
  json out_geometry = json::object();
  int written = 0;
  for (const auto& e : entries) {
    const fs::path in = latent_file(o.latents, e.subject_id);
    const auto ls = latent::load_latent_subject(in);
    const Spacing sp = rescale_slices(spacing_from_json(geometry.at(e.subject_id)), ls.n_s(), n_target);
    out_geometry[e.subject_id] = spacing_json(sp);
    Provenance prov{"synth-intra", {{"n_target", n_target}}, ctx.config.seed, {}};
    prov.add_input(o.model);
    prov.add_input(in);
    const fs::path out = latent_file(dir, e.subject_id);
    if (artifact_current(out, prov) && subject_current(dir, e.subject_id, prov)) continue;
    const auto up = latent::intra_subject_interpolate(ls, n_target);
    fs::create_directories(dir);
    latent::save_latent_subject(out, up);
    write_sidecar(out, prov);
    emit_subject(dir, decoded_subject(*vae, up, {e.subject_id, e.pathology, e.vendor, e.phase}, sp), prov);
    ++written;
  }
  Provenance mprov{"synth-intra", {{"n_target", n_target}}, ctx.config.seed, {}};
  mprov.add_input(fs::path(o.latents) / kManifestName);
  emit_manifest(dir, entries, mprov);
  write_text(dir / kGeometryName, out_geometry.dump(2) + "\n");
  report(ctx.out, "synth-intra", written, static_cast<int>(entries.size()) - written, dir);
}

// ------------------------------------------------------------ synth-inter

struct SynthInterOptions {
  std::string model, latents, a, b;
  std::optional<std::vector<double>> alphas;
  std::optional<std::string> out;
};

void cmd_synth_inter(const SynthInterOptions& o, Context& ctx) {
  require_file(o.model, "--model");
  require_dir(o.latents, "--latents");
  require_file(latent_file(o.latents, o.a), "--a");
  require_file(latent_file(o.latents, o.b), "--b");
  if (o.alphas) ctx.config.synthesis.inter_alphas = *o.alphas;
  validate(ctx.config);
  const auto& alphas = ctx.config.synthesis.inter_alphas;
  const fs::path dir = o.out ? fs::path(*o.out) : ctx.config.output_root / "inter" / (o.a + "__" + o.b);
  Provenance prov{"synth-inter", {{"alphas", alphas}}, ctx.config.seed, {}};
  prov.add_input(o.model);
  prov.add_input(latent_file(o.latents, o.a));
  prov.add_input(latent_file(o.latents, o.b));

  const auto entries = read_dataset_manifest(o.latents);
  auto find = [&](const std::string& id) {
    for (const auto& e : entries)
      if (e.subject_id == id) return e;
    throw ConfigError("subject " + id + " is not in the manifest of " + o.latents);
  };
  const auto ea = find(o.a), eb = find(o.b);
  const auto la = latent::load_latent_subject(latent_file(o.latents, o.a));
  const auto lb = latent::load_latent_subject(latent_file(o.latents, o.b));
  const Spacing sp = spacing_from_json(read_geometry(o.latents).at(o.a));
  auto vae = load_vae(o.model);
  const auto seq = latent::inter_subject_interpolate(la, lb, alphas);
  std::vector<io::ManifestEntry> out_entries;
  json geometry = json::object();
  int written = 0;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    const std::string id = o.a + "_to_" + o.b + "_" + std::to_string(k);
    const Pathology p = alphas[k] == 0.0 ? ea.pathology : alphas[k] == 1.0 ? eb.pathology : Pathology::UNKNOWN;
    out_entries.push_back({id, p, ea.vendor, ea.phase});
    geometry[id] = spacing_json(sp);
    const fs::path out = latent_file(dir, id);
    if (artifact_current(out, prov) && subject_current(dir, id, prov)) continue;
    fs::create_directories(dir);
    latent::save_latent_subject(out, {seq[k].codes, id});
    write_sidecar(out, prov);
    emit_subject(dir, decoded_subject(*vae, seq[k], {id, p, ea.vendor, ea.phase}, sp), prov);
    ++written;
  }
  emit_manifest(dir, out_entries, prov);
  write_text(dir / kGeometryName, geometry.dump(2) + "\n");
  report(ctx.out, "synth-inter", written, static_cast<int>(seq.size()) - written, dir);
}

// -------------------------------------------------------- synth-pathology

struct SynthPathologyOptions {
  std::string model, target, nor_id;
  std::optional<std::string> nor, cohort, out;
  std::optional<int> steps;
  bool uncorrelated = false;
};

std::vector<latent::LatentSubject> load_latent_cohort(const fs::path& dir, int n_target) {
  std::vector<latent::LatentSubject> out;
  for (const auto& e : read_dataset_manifest(dir)) {
    auto ls = latent::load_latent_subject(latent_file(dir, e.subject_id));
    if (ls.n_s() != n_target) ls = latent::intra_subject_interpolate(ls, n_target);
    out.push_back(std::move(ls));
  }
  return out;
}

void cmd_synth_pathology(const SynthPathologyOptions& o, Context& ctx) {
  require_file(o.model, "--model");
  const Pathology target = config_value([&] { return parse_pathology(o.target); });
  if (target == Pathology::NOR || target == Pathology::UNKNOWN) throw ConfigError("--target must be a pathology (DCM, HCM, DRV)");
  auto& syn = ctx.config.synthesis;
  if (o.steps) syn.pathology_steps = *o.steps;
  if (o.uncorrelated) syn.correlated = false;
  auto cohort_dir = [&](const std::optional<std::string>& flag, const std::string& tag) -> fs::path {
    if (flag) return *flag;
    const auto it = syn.cohorts.find(tag);
    if (it == syn.cohorts.end()) throw ConfigError("no latent directory for cohort " + tag + " (flag or synthesis.cohorts)");
    return it->second;
  };
  const fs::path nor_dir = cohort_dir(o.nor, "NOR");
  const fs::path path_dir = cohort_dir(o.cohort, std::string(to_string(target)));
  require_dir(nor_dir, "NOR latents");
  require_dir(path_dir, std::string(to_string(target)) + " latents");
  require_file(latent_file(nor_dir, o.nor_id), "--nor-id");
  validate(ctx.config);

  const std::string tag(to_string(target));
  const fs::path dir = o.out ? fs::path(*o.out) : ctx.config.output_root / "pathology" / tag / o.nor_id;
  const int n_target = syn.n_target;
  const json cfg{{"target", tag}, {"nor_id", o.nor_id}, {"steps", syn.pathology_steps},
                 {"correlated", syn.correlated}, {"n_target", n_target}};
  Provenance prov{"synth-pathology", cfg, ctx.config.seed, {}};
  prov.add_input(o.model);
  prov.add_input_dir(path_dir);
  prov.add_input(latent_file(nor_dir, o.nor_id));

  std::vector<std::string> ids;
  for (int k = 1; k <= syn.pathology_steps; ++k) ids.push_back(o.nor_id + "_" + tag + "_" + std::to_string(k));
  const fs::path stats_file = dir / "stats.bundle", corr_file = dir / "correlation.bundle", pseudo_file = dir / "pseudo.latent";
  bool current = all_current({stats_file, corr_file, pseudo_file}, prov);
  for (const auto& id : ids) current = current && artifact_current(latent_file(dir, id), prov) && subject_current(dir, id, prov);
  if (current) {
    ctx.out << "synth-pathology: up to date " << dir.string() << "\n";
    return;
  }

  const auto cohort = load_latent_cohort(path_dir, n_target);
  auto nor = latent::load_latent_subject(latent_file(nor_dir, o.nor_id));
  const Eigen::Index nor_slices = nor.n_s();
  if (nor.n_s() != n_target) nor = latent::intra_subject_interpolate(nor, n_target);
  io::ManifestEntry nor_entry{o.nor_id, Pathology::NOR, "", Phase::ED};
  for (const auto& e : read_dataset_manifest(nor_dir))
    if (e.subject_id == o.nor_id) nor_entry = e;
  const Spacing sp = rescale_slices(spacing_from_json(read_geometry(nor_dir).at(o.nor_id)), nor_slices, n_target);

  const auto stats = latent::estimate_pathology_stats(cohort, target);
  std::vector<std::string> warnings;
  const auto corr = syn.correlated ? latent::estimate_correlation_model(cohort, nor, &warnings)
                                   : latent::identity_correlation_model(nor.n_s(), nor.n_z());
  for (const auto& w : warnings) ctx.out << "synth-pathology: warning: " << w << "\n";
  std::mt19937_64 rng(derived_seed(ctx.config.seed, o.nor_id + "/" + tag));
  auto pseudo = latent::sample_pseudo_pathology(stats, rng, syn.correlated ? &corr : nullptr);
  pseudo.subject_id = "pseudo_" + tag;

  std::vector<double> alphas;
  for (int k = 1; k <= syn.pathology_steps; ++k) alphas.push_back(static_cast<double>(k) / syn.pathology_steps);
  const auto seq = latent::pathology_interpolate(nor, pseudo, alphas);

  fs::create_directories(dir);
  latent::save_pathology_stats(stats_file, stats);
  latent::save_correlation_model(corr_file, corr);
  latent::save_latent_subject(pseudo_file, pseudo);
  for (const auto& f : {stats_file, corr_file, pseudo_file}) write_sidecar(f, prov);
  auto vae = load_vae(o.model);
  std::vector<io::ManifestEntry> entries;
  json geometry = json::object();
  for (std::size_t k = 0; k < seq.size(); ++k) {
    const SubjectMeta meta{ids[k], target, nor_entry.vendor, nor_entry.phase};
    latent::save_latent_subject(latent_file(dir, ids[k]), {seq[k].codes, ids[k]});
    write_sidecar(latent_file(dir, ids[k]), prov);
    emit_subject(dir, decoded_subject(*vae, seq[k], meta, sp), prov);
    entries.push_back(io::manifest_entry(meta));
    geometry[ids[k]] = spacing_json(sp);
  }
  emit_manifest(dir, entries, prov);
  write_text(dir / kGeometryName, geometry.dump(2) + "\n");
  ctx.out << "synth-pathology: wrote " << seq.size() << " subjects to " << dir.string() << "\n";
}

// -------------------------------------------------------------- train-gan

struct TrainGanOptions {
  std::vector<std::string> data;
  std::optional<std::string> out;
  std::optional<int> epochs, batch_size;
};

void cmd_train_gan(const TrainGanOptions& o, Context& ctx) {
  for (const auto& d : o.data) require_dir(d, "--data");
  auto& cfg = ctx.config.gan;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  validate(ctx.config);
  const fs::path dir = o.out ? fs::path(*o.out) : ctx.config.output_root / "gan";
  const fs::path ckpt = dir / "gan.ckpt", log = dir / "gan_log.csv";
  Provenance prov{"train-gan", to_json(cfg), ctx.config.seed, {}};
  for (const auto& d : o.data) prov.add_input_dir(d);
  if (all_current({ckpt, log}, prov)) {
    ctx.out << "train-gan: up to date " << ckpt.string() << "\n";
    return;
  }
  std::vector<ImagePair> pairs;
  for (const auto& d : o.data)
    for (const auto& s : load_dataset(d).subjects) {
      auto p = slice_pairs(s);
      pairs.insert(pairs.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    }
  auto trained = train_gan(pairs, cfg, [&](const GanEpochRecord& r) {
    ctx.out << "train-gan: epoch " << r.epoch << " g_total " << r.g_total << " d_real " << r.d_real << " d_fake "
            << r.d_fake << " d_accuracy " << r.d_accuracy << "\n";
  });
  save_gan(ckpt, *trained.model);
  write_gan_log(log, trained.log);
  write_sidecar(ckpt, prov);
  write_sidecar(log, prov);
  ctx.out << "train-gan: wrote " << ckpt.string() << " (" << pairs.size() << " pairs)\n";
}

// ----------------------------------------------------------------- render

struct RenderOptions {
  std::string model, labels, style;
  std::optional<std::string> out;
};

void cmd_render(const RenderOptions& o, Context& ctx) {
  require_file(o.model, "--model");
  require_dir(o.labels, "--labels");
  require_file(o.style, "--style");
  validate(ctx.config);
  const fs::path dir = o.out ? fs::path(*o.out) : ctx.config.output_root / "rendered" / dir_name(o.labels);
  const auto entries = read_dataset_manifest(o.labels);
  auto gan = load_gan(o.model);
  const Subject style = io::load_subject(o.style);
  std::atomic<int> written{0};
  parallel_for(entries.size(), ctx.jobs, [&](std::size_t i) {
    const auto& e = entries[i];
    Provenance prov{"render", json::object(), ctx.config.seed, {}};
    prov.add_input(o.model);
    prov.add_input(o.style);
    prov.add_input(io::label_path(o.labels, e.subject_id));
    if (subject_current(dir, e.subject_id, prov)) return;
    const Subject labels = io::load_subject(io::image_path(o.labels, e.subject_id));
    Subject s = synthesize_subject(*gan, labels.labels, style);
    s.meta = {e.subject_id, e.pathology, style.meta.vendor, e.phase};
    emit_subject(dir, s, prov);
    ++written;
  });
  Provenance mprov{"render", json::object(), ctx.config.seed, {}};
  mprov.add_input(fs::path(o.labels) / kManifestName);
  std::vector<io::ManifestEntry> out_entries = entries;
  for (auto& e : out_entries) e.vendor = style.meta.vendor;
  emit_manifest(dir, out_entries, mprov);
  report(ctx.out, "render", written, static_cast<int>(entries.size()) - written, dir);
}

// -------------------------------------------------------------- train-seg

struct TrainSegOptions {
  std::vector<std::string> data;
  std::optional<std::string> out;
  std::optional<int> max_epochs, iterations;
};

void cmd_train_seg(const TrainSegOptions& o, Context& ctx) {
  for (const auto& d : o.data) require_dir(d, "--data");
  auto& cfg = ctx.config.segmentation;
  if (o.max_epochs) cfg.max_epochs = *o.max_epochs;
  if (o.iterations) cfg.iterations_per_epoch = *o.iterations;
  validate(ctx.config);
  const fs::path dir = o.out ? fs::path(*o.out) : ctx.config.output_root / "seg";
  const fs::path ckpt = dir / "seg.ckpt", log = dir / "seg_log.csv";
  Provenance prov{"train-seg", to_json(cfg), ctx.config.seed, {}};
  for (const auto& d : o.data) prov.add_input_dir(d);
  if (all_current({ckpt, log}, prov)) {
    ctx.out << "train-seg: up to date " << ckpt.string() << "\n";
    return;
  }
  std::vector<std::vector<Subject>> sets;
  for (const auto& d : o.data) sets.push_back(load_dataset(d).subjects);
  auto trained = train_segmenter(sets, cfg, [&](const SegEpochRecord& r) {
    ctx.out << "train-seg: epoch " << r.epoch << " train " << r.train_loss << " val " << r.validation_loss << " lr "
            << r.learning_rate << "\n";
  });
  save_segmenter(ckpt, *trained.model);
  write_seg_log(log, trained.log);
  write_sidecar(ckpt, prov);
  write_sidecar(log, prov);
  ctx.out << "train-seg: wrote " << ckpt.string() << " (best epoch " << trained.best_epoch
          << (trained.early_stopped ? ", stopped on the step-size floor" : "") << ")\n";
}

// --------------------------------------------------------------- evaluate

struct EvaluateOptions {
  std::vector<std::string> models;
  std::optional<std::string> data, experiment, out;
};

ExperimentManifest read_experiment(const fs::path& file, Provenance& prov) {
  std::ifstream in(file);
  json j;
  try {
    j = json::parse(in);
    ExperimentManifest m;
    m.test_set = j.at("test_set").get<std::string>();
    for (const auto& [name, dirs] : j.at("datasets").items()) {
      auto& subjects = m.datasets[name];
      for (const auto& d : dirs.is_array() ? dirs : json::array({dirs})) {
        const fs::path dir = d.get<std::string>();
        require_dir(dir, "experiment dataset " + name);
        prov.add_input_dir(dir);
        auto loaded = load_dataset(dir).subjects;
        subjects.insert(subjects.end(), loaded.begin(), loaded.end());
      }
    }
    for (const auto& mj : j.at("models")) {
      m.models.push_back({mj.at("name").get<std::string>(), mj.at("datasets").get<std::vector<std::string>>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw ConfigError("experiment file " + file.string() + ": " + e.what());
  }
}

void cmd_evaluate(const EvaluateOptions& o, Context& ctx) {
  if (o.experiment.has_value() == (o.data.has_value() || !o.models.empty())) {
    throw ConfigError("evaluate needs either --experiment or --model NAME=CKPT with --data");
  }
  validate(ctx.config);
  const fs::path dir = o.out ? fs::path(*o.out) : ctx.config.output_root / "eval";
  const fs::path table = dir / "report.csv", scores = dir / "scores.csv";
  Provenance prov{"evaluate", json::object(), ctx.config.seed, {}};
  ExperimentReport rep;
  if (o.experiment) {
    require_file(*o.experiment, "--experiment");
    prov.config = to_json(ctx.config.segmentation);
    prov.add_input(*o.experiment);
    const auto manifest = read_experiment(*o.experiment, prov);
    if (all_current({table, scores}, prov)) {
      ctx.out << "evaluate: up to date " << table.string() << "\n";
      return;
    }
    rep = run_experiment_matrix(manifest, ctx.config.segmentation, [&](const std::string& m, const SegEpochRecord& r) {
      ctx.out << "evaluate: " << m << " epoch " << r.epoch << " val " << r.validation_loss << " lr " << r.learning_rate << "\n";
    });
    for (const auto& m : rep.models) write_seg_log(dir / ("seg_log_" + m.name + ".csv"), m.log);
  } else {
    if (!o.data) throw ConfigError("evaluate: --data is required with --model");
    if (o.models.empty()) throw ConfigError("evaluate: --model NAME=CKPT is required with --data");
    require_dir(*o.data, "--data");
    std::vector<std::pair<std::string, fs::path>> models;
    for (const auto& spec : o.models) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--model expects NAME=CKPT, got " + spec);
      models.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
      require_file(models.back().second, "--model " + models.back().first);
      prov.add_input(models.back().second);
    }
    prov.config = json{{"models", o.models}};
    prov.add_input_dir(*o.data);
    if (all_current({table, scores}, prov)) {
      ctx.out << "evaluate: up to date " << table.string() << "\n";
      return;
    }
    const auto test = load_dataset(*o.data).subjects;
    for (const auto& [name, path] : models) {
      auto seg = load_segmenter(path);
      rep.models.push_back(evaluate_segmenter(*seg, name, test, rep.scores));
    }
  }
  write_report_table(table, rep);
  write_boxplot_data(scores, rep);
  write_sidecar(table, prov);
  write_sidecar(scores, prov);
  for (const auto& m : rep.models) ctx.out << "evaluate: " << m.name << " mean foreground dice " << m.mean_foreground_dice() << "\n";
  ctx.out << "evaluate: wrote " << table.string() << "\n";
}

// ------------------------------------------------------------------- plot

struct PlotOptions {
  std::string kind;
  std::vector<std::string> inputs;
  std::optional<std::string> out;
  double perplexity = 30.0;
};

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

// Maps a value range onto pixel coordinates of a plot area with a margin.
struct Axis {
  double lo, hi;
  int p0, p1;
  int operator()(double v) const {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    return static_cast<int>(std::lround(p0 + t * (p1 - p0)));
  }
};

void draw_frame(Canvas& c, int m) {
  const Rgb grey{90, 90, 90};
  c.line(m, c.height() - m, c.width() - m, c.height() - m, grey);
  c.line(m, m, m, c.height() - m, grey);
}

void plot_loss(const fs::path& log, const fs::path& dir, Provenance& prov) {
  const auto rows = read_csv(log);
  if (rows.size() < 2) throw InvalidArgumentError("plot loss: " + log.string() + " has no records");
  const auto& header = rows[0];
  std::ostringstream csv;
  csv.precision(10);
  csv << "series,epoch,value,normalised\n";
  Canvas c(640, 400);
  draw_frame(c, 30);
  for (std::size_t col = 1; col < header.size(); ++col) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t r = 1; r < rows.size(); ++r)
      if (col < rows[r].size() && !rows[r][col].empty()) pts.emplace_back(std::stod(rows[r][0]), std::stod(rows[r][col]));
    if (pts.empty()) continue;
    auto [mn, mx] = std::minmax_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.second < b.second; });
    const double lo = mn->second, hi = mx->second;
    const Axis ax{pts.front().first, pts.back().first, 30, c.width() - 30}, ay{lo, hi, c.height() - 30, 30};
    for (std::size_t k = 0; k < pts.size(); ++k) {
      csv << header[col] << ',' << pts[k].first << ',' << pts[k].second << ','
          << (hi > lo ? (pts[k].second - lo) / (hi - lo) : 0.0) << '\n';
      if (k > 0) c.line(ax(pts[k - 1].first), ay(pts[k - 1].second), ax(pts[k].first), ay(pts[k].second), series_colour(static_cast<int>(col - 1)));
    }
  }
  c.write_ppm(dir / "loss.ppm");
  write_text(dir / "loss.csv", csv.str());
  prov.add_input(log);
}

void plot_slices(const fs::path& image_file, const fs::path& dir, Provenance& prov) {
  const Subject s = io::load_subject(image_file);
  const int n = s.image.slices(), h = s.image.rows(), w = s.image.cols();
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))), rows = (n + cols - 1) / cols;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> montage =
      Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(rows * h, cols * w, 0.0f);
  Canvas labels(cols * w, rows * h, {0, 0, 0});
  std::ostringstream csv;
  csv << "slice,class,area_px\n";
  for (int k = 0; k < n; ++k) {
    const int r0 = (k / cols) * h, c0 = (k % cols) * w;
    montage.block(r0, c0, h, w) = image_slice(s.image, k);
    std::array<int, kNumClasses> area{};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int cls = s.labels.empty() ? 0 : s.labels(k, y, x);
        ++area[cls];
        labels.set(c0 + x, r0 + y, class_colour(cls));
      }
    for (int cls = 0; cls < kNumClasses; ++cls) csv << k << ',' << cls << ',' << area[cls] << '\n';
  }
  const float lo = montage.minCoeff(), hi = montage.maxCoeff();
  write_pgm(dir / "slices.pgm", montage, lo, hi > lo ? hi : lo + 1.0f);
  labels.write_ppm(dir / "labels.ppm");
  write_text(dir / "slices.csv", csv.str());
  prov.add_input(image_file);
}

void plot_embedding(const std::vector<std::string>& inputs, double perplexity, std::uint64_t seed, const fs::path& dir,
                    Provenance& prov) {
  std::vector<Eigen::MatrixXd> blocks;
  std::vector<int> labels;
  std::vector<std::string> tags, subjects;
  for (const auto& spec : inputs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("plot embedding: inputs are TAG=LATENT_DIR, got " + spec);
    const std::string tag = spec.substr(0, eq);
    const fs::path ldir = spec.substr(eq + 1);
    require_dir(ldir, "plot embedding input " + tag);
    prov.add_input_dir(ldir);
    tags.push_back(tag);
    for (const auto& e : read_dataset_manifest(ldir)) {
      const auto ls = latent::load_latent_subject(latent_file(ldir, e.subject_id));
      blocks.push_back(ls.codes);
      for (Eigen::Index k = 0; k < ls.n_s(); ++k) {
        labels.push_back(static_cast<int>(tags.size() - 1));
        subjects.push_back(e.subject_id);
      }
    }
  }
  Eigen::Index rows = 0;
  for (const auto& b : blocks) rows += b.rows();
  if (rows < 4) throw InvalidArgumentError("plot embedding: need at least four encoded slices");
  Eigen::MatrixXd codes(rows, blocks.front().cols());
  rows = 0;
  for (const auto& b : blocks) {
    codes.middleRows(rows, b.rows()) = b;
    rows += b.rows();
  }
  latent::TsneOptions opt;
  opt.perplexity = perplexity;
  opt.seed = seed;
  const auto emb = latent::embed_latents_2d(codes, labels, opt);
  Canvas c(600, 600);
  const Axis ax{emb.points.col(0).minCoeff(), emb.points.col(0).maxCoeff(), 20, 580};
  const Axis ay{emb.points.col(1).minCoeff(), emb.points.col(1).maxCoeff(), 580, 20};
  std::ostringstream csv;
  csv.precision(8);
  csv << "# silhouette " << emb.silhouette << "\n" << "tag,subject,x,y\n";
  for (Eigen::Index i = 0; i < emb.points.rows(); ++i) {
    c.dot(ax(emb.points(i, 0)), ay(emb.points(i, 1)), 3, series_colour(labels[i]));
    csv << tags[labels[i]] << ',' << subjects[i] << ',' << emb.points(i, 0) << ',' << emb.points(i, 1) << '\n';
  }
  c.write_ppm(dir / "embedding.ppm");
  write_text(dir / "embedding.csv", csv.str());
}

void plot_scores(const fs::path& scores, const fs::path& dir, Provenance& prov) {
  const auto rows = read_csv(scores);
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 5) throw InvalidArgumentError("plot scores: malformed row in " + scores.string());
    groups[{rows[r][0], rows[r][3]}].push_back(std::stod(rows[r][4]));
  }
  if (groups.empty()) throw InvalidArgumentError("plot scores: " + scores.string() + " has no records");
  auto quantile = [](std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    return i + 1 < v.size() ? v[i] + (pos - i) * (v[i + 1] - v[i]) : v[i];
  };
  const int box = 40, gap = 20, m = 30;
  Canvas c(2 * m + static_cast<int>(groups.size()) * (box + gap), 400);
  draw_frame(c, m);
  const Axis ay{0.0, 1.0, c.height() - m, m};
  std::ostringstream csv;
  csv.precision(6);
  csv << "model,class,min,q1,median,q3,max\n";
  int g = 0;
  std::map<std::string, int> model_index;
  for (const auto& [key, v] : groups) {
    const auto [it, added] = model_index.emplace(key.first, static_cast<int>(model_index.size()));
    const double q[5] = {quantile(v, 0), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), quantile(v, 1)};
    csv << key.first << ',' << key.second;
    for (double x : q) csv << ',' << x;
    csv << '\n';
    const int x0 = m + gap / 2 + g * (box + gap), xc = x0 + box / 2;
    const Rgb col = series_colour(it->second);
    c.line(xc, ay(q[0]), xc, ay(q[4]), col);
    c.fill_rect(x0, ay(q[1]), x0 + box, ay(q[3]), col);
    c.line(x0, ay(q[2]), x0 + box, ay(q[2]), {0, 0, 0});
    ++g;
  }
  c.write_ppm(dir / "scores.ppm");
  write_text(dir / "scores_summary.csv", csv.str());
  prov.add_input(scores);
}

void cmd_plot(const PlotOptions& o, Context& ctx) {
  validate(ctx.config);
  const fs::path dir = o.out ? fs::path(*o.out) : ctx.config.output_root / "plots" / o.kind;
  if (o.inputs.empty()) throw ConfigError("plot: --input is required");
  if (o.kind != "embedding") {
    if (o.inputs.size() != 1) throw ConfigError("plot " + o.kind + ": exactly one --input");
    require_file(o.inputs[0], "--input");
  }
  Provenance prov{"plot", {{"kind", o.kind}, {"perplexity", o.perplexity}}, ctx.config.seed, {}};
  fs::create_directories(dir);
  std::vector<fs::path> artifacts;
  if (o.kind == "loss") {
    plot_loss(o.inputs[0], dir, prov);
    artifacts = {dir / "loss.ppm", dir / "loss.csv"};
  } else if (o.kind == "slices") {
    plot_slices(o.inputs[0], dir, prov);
    artifacts = {dir / "slices.pgm", dir / "labels.ppm", dir / "slices.csv"};
  } else if (o.kind == "embedding") {
    plot_embedding(o.inputs, o.perplexity, ctx.config.seed, dir, prov);
    artifacts = {dir / "embedding.ppm", dir / "embedding.csv"};
  } else {
    plot_scores(o.inputs[0], dir, prov);
    artifacts = {dir / "scores.ppm", dir / "scores_summary.csv"};
  }
  for (const auto& a : artifacts) write_sidecar(a, prov);
  ctx.out << "plot: wrote " << artifacts.size() << " files to " << dir.string() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic cardiac MR label and image generation pipeline", "cmrsynth"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_file, "Pipeline configuration (JSON); flags override it");
  app.add_option("--out-root", g.out_root, "Output root (overrides CMRSYNTH_OUT and the config file)");
  app.add_option("--seed", g.seed, "Global seed for every stochastic stage");
  app.add_option("--jobs", g.jobs, "Worker threads for per-subject stages")->check(CLI::PositiveNumber);

  PhantomOptions phantom;
  auto* ph = app.add_subcommand("phantom", "Generate parametric phantom subjects");
  ph->require_subcommand(1);
  auto* ph_gen = ph->add_subcommand("generate", "Write a phantom cohort and its manifest");
  ph_gen->add_option("--preset", phantom.preset, "NOR, DCM, HCM or DRV")->required();
  ph_gen->add_option("--count", phantom.count, "Number of subjects");
  ph_gen->add_option("--severity", phantom.severity, "Pathology severity (0 = normal anatomy)");
  ph_gen->add_option("--vendor", phantom.vendor, "Intensity profile, A or B");
  ph_gen->add_option("--phase", phantom.phase, "ED or ES");
  ph_gen->add_option("--id-prefix", phantom.id_prefix, "Subject id prefix");
  ph_gen->add_option("--out", phantom.out, "Output directory");

  PreprocessCliOptions pre;
  auto* pp = app.add_subcommand("preprocess", "Resample, crop and normalise a dataset");
  pp->add_option("--in", pre.in, "Dataset directory")->required();
  pp->add_option("--out", pre.out, "Output directory");
  pp->add_option("--spacing", pre.options.target_mm, "In-plane spacing (mm)");
  pp->add_option("--size", pre.options.size_px, "Crop size (px)");
  pp->add_option("--lo-pct", pre.options.lo_pct, "Lower intensity percentile");
  pp->add_option("--hi-pct", pre.options.hi_pct, "Upper intensity percentile");

  TrainVaeOptions tv;
  auto* tvc = app.add_subcommand("train-vae", "Train the label VAE");
  tvc->add_option("--data", tv.data, "Preprocessed dataset directories")->required();
  tvc->add_option("--out", tv.out, "Output directory");
  tvc->add_option("--epochs", tv.epochs, "Training epochs");
  tvc->add_option("--batch-size", tv.batch_size, "Batch size");
  tvc->add_option("--lr", tv.learning_rate, "Learning rate");

  EncodeOptions enc;
  auto* ec = app.add_subcommand("encode", "Encode every slice of a dataset into latent codes");
  ec->add_option("--model", enc.model, "VAE checkpoint")->required();
  ec->add_option("--data", enc.data, "Preprocessed dataset directory")->required();
  ec->add_option("--out", enc.out, "Output directory");

  SynthIntraOptions si;
  auto* sic = app.add_subcommand("synth-intra", "Interpolate subjects to a fixed slice count");
  sic->add_option("--model", si.model, "VAE checkpoint")->required();
  sic->add_option("--latents", si.latents, "Latent directory")->required();
  sic->add_option("--subject", si.subject, "Only this subject");
  sic->add_option("--n-target", si.n_target, "Output slice count");
  sic->add_option("--out", si.out, "Output directory");

  SynthInterOptions sx;
  auto* sxc = app.add_subcommand("synth-inter", "Interpolate between two subjects");
  sxc->add_option("--model", sx.model, "VAE checkpoint")->required();
  sxc->add_option("--latents", sx.latents, "Latent directory holding both subjects")->required();
  sxc->add_option("--a", sx.a, "First subject")->required();
  sxc->add_option("--b", sx.b, "Second subject")->required();
  sxc->add_option("--alphas", sx.alphas, "Mixing weights in [0, 1]")->delimiter(',');
  sxc->add_option("--out", sx.out, "Output directory");

  SynthPathologyOptions sp;
  auto* spc = app.add_subcommand("synth-pathology", "Morph a normal subject towards a pseudo-pathological sample");
  spc->add_option("--model", sp.model, "VAE checkpoint")->required();
  spc->add_option("--target", sp.target, "DCM, HCM or DRV")->required();
  spc->add_option("--nor-id", sp.nor_id, "Normal subject to morph")->required();
  spc->add_option("--steps", sp.steps, "Number of subjects along the path");
  spc->add_option("--nor", sp.nor, "Latent directory of the normal cohort");
  spc->add_option("--cohort", sp.cohort, "Latent directory of the target cohort");
  spc->add_flag("--uncorrelated", sp.uncorrelated, "Skip the latent and slice correlation step");
  spc->add_option("--out", sp.out, "Output directory");

  TrainGanOptions tg;
  auto* tgc = app.add_subcommand("train-gan", "Train the label-to-image generator");
  tgc->add_option("--data", tg.data, "Preprocessed dataset directories")->required();
  tgc->add_option("--out", tg.out, "Output directory");
  tgc->add_option("--epochs", tg.epochs, "Training epochs");
  tgc->add_option("--batch-size", tg.batch_size, "Batch size");

  RenderOptions rd;
  auto* rdc = app.add_subcommand("render", "Render images for label-only subjects");
  rdc->add_option("--model", rd.model, "Generator checkpoint")->required();
  rdc->add_option("--labels", rd.labels, "Directory of labeled subjects")->required();
  rdc->add_option("--style", rd.style, "Image file of the style source subject")->required();
  rdc->add_option("--out", rd.out, "Output directory");

  TrainSegOptions ts;
  auto* tsc = app.add_subcommand("train-seg", "Train the segmentation network");
  tsc->add_option("--data", ts.data, "Preprocessed dataset directories (pooled)")->required();
  tsc->add_option("--out", ts.out, "Output directory");
  tsc->add_option("--max-epochs", ts.max_epochs, "Epoch limit");
  tsc->add_option("--iterations", ts.iterations, "Batches per epoch");

  EvaluateOptions ev;
  auto* evc = app.add_subcommand("evaluate", "Score segmenters (Dice, Hausdorff) on a test set");
  evc->add_option("--model", ev.models, "NAME=CHECKPOINT, repeatable");
  evc->add_option("--data", ev.data, "Test dataset directory");
  evc->add_option("--experiment", ev.experiment, "Experiment file: train and score a model matrix");
  evc->add_option("--out", ev.out, "Output directory");

  PlotOptions pl;
  auto* plc = app.add_subcommand("plot", "Render figures and their plot data");
  plc->add_option("--kind", pl.kind, "loss, slices, embedding or scores")
      ->required()
      ->check(CLI::IsMember({"loss", "slices", "embedding", "scores"}));
  plc->add_option("--input", pl.inputs, "Log CSV, subject image, TAG=LATENT_DIR or scores CSV")->required();
  plc->add_option("--perplexity", pl.perplexity, "t-SNE perplexity");
  plc->add_option("--out", pl.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ConversionError& e) {
    err << "cmrsynth: invalid value: " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const CLI::ValidationError& e) {
    err << "cmrsynth: invalid value: " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const CLI::ParseError& e) {
    err << "cmrsynth: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  const auto chosen = app.get_subcommands();
  const std::string stage = chosen.front()->get_name();
  Context ctx{{}, g.jobs, out};
  try {
    ctx.config = resolve_config(g);
    if (ph->parsed()) cmd_phantom(phantom, ctx);
    else if (pp->parsed()) cmd_preprocess(pre, ctx);
    else if (tvc->parsed()) cmd_train_vae(tv, ctx);
    else if (ec->parsed()) cmd_encode(enc, ctx);
    else if (sic->parsed()) cmd_synth_intra(si, ctx);
    else if (sxc->parsed()) cmd_synth_inter(sx, ctx);
    else if (spc->parsed()) cmd_synth_pathology(sp, ctx);
    else if (tgc->parsed()) cmd_train_gan(tg, ctx);
    else if (rdc->parsed()) cmd_render(rd, ctx);
    else if (tsc->parsed()) cmd_train_seg(ts, ctx);
    else if (evc->parsed()) cmd_evaluate(ev, ctx);
    else if (plc->parsed()) cmd_plot(pl, ctx);
  } catch (const ConfigError& e) {
    err << "cmrsynth: invalid configuration for " << stage << ": " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const std::exception& e) {
    err << "cmrsynth: stage '" << stage << "' failed: " << e.what() << "\n";
    return kExitStageFailure;
  }
  return kExitOk;
}

}  // namespace cmr::cli
