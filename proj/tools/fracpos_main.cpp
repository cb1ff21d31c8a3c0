// Copyright 2026 The fracpos Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// fracpos command-line driver: gen-data | train | decode | eval | bench |
// flops | sweep-eos. Every command writes into --out, starting with the
// resolved config; a failing command removes what it wrote.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fracpos/bench.hpp"
#include "fracpos/checkpoint.hpp"
#include "fracpos/config.hpp"
#include "fracpos/data.hpp"
#include "fracpos/decoding.hpp"
#include "fracpos/error.hpp"
#include "fracpos/flops.hpp"
#include "fracpos/kernels.hpp"
#include "fracpos/metrics.hpp"
#include "fracpos/training.hpp"

namespace fs = std::filesystem;
using namespace fracpos;

namespace {

// Files created by the running command; removed unless commit() is reached.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_dir_ = true;
    }
  }
  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : files_) fs::remove(p, ec);
    if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
  }
  fs::path file(const std::string& name) {
    files_.push_back(dir_ / name);
    return files_.back();
  }
  void write(const std::string& name, const std::string& text) {
    std::ofstream out(file(name));
    out << text;
    if (!out) throw Error("cannot write " + (dir_ / name).string());
  }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
  bool created_dir_ = false;
  bool committed_ = false;
};

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Config file (key = value, version = 1)");
  cmd->add_option("--set", c.overrides, "Override a config key: key=value")->take_all();
  cmd->add_option("--out", c.out, "Output directory")->required();
}

RunConfig resolve(const Common& c, const RunConfig* base = nullptr) {
  RunConfig cfg = base ? *base : (c.config.empty() ? RunConfig{} : load_config(c.config));
  if (base && !c.config.empty()) {
    cfg = load_config(c.config);
    cfg.model = base->model;
  }
  for (const auto& o : c.overrides) {
    if (base && o.rfind("model.", 0) == 0) throw Error("model keys come from the checkpoint: " + o);
    apply_override(cfg, o);
  }
  cfg.validate();
  return cfg;
}

std::string config_record(const RunConfig& cfg) {
  return "# fracpos " FRACPOS_VERSION "\n" + cfg.to_text();
}

// A checkpoint's metadata is the config it was trained with.
struct LoadedModel {
  RunConfig cfg;
  std::unique_ptr<Model> model;
};

LoadedModel load_model(const fs::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  LoadedModel m;
  m.cfg = parse_config(ckpt.meta);
  m.model = std::make_unique<Model>(m.cfg.model);
  const auto params = m.model->parameters();
  restore(params, ckpt);
  return m;
}

std::string label_of(const Model& m) {
  if (m.config().head == HeadKind::l2r) return "L2R";
  std::string s(posenc::scheme_name(m.config().pe));
  for (char& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

std::vector<decoding::DecodeResult> decode_all(const Model& model, const RunConfig& cfg,
                                               const data::Dataset& ds) {
  std::vector<std::vector<int>> sources;
  for (const auto& p : ds.pairs) sources.push_back(p.src);
  if (cfg.budget > 0) return decoding::batch_decode(model, sources, cfg.budget, cfg.decode).results;
  std::vector<decoding::DecodeResult> out;
  for (const auto& s : sources)
    out.push_back(model.config().head == HeadKind::l2r
                      ? decoding::decode_l2r(model, s, cfg.beam, cfg.decode.max_len)
                      : decoding::decode_insertion(model, s, cfg.decode));
  return out;
}

struct Quality {
  double em, token_acc, bleu, steps, len;
};

Quality score(const data::Dataset& ds, const std::vector<decoding::DecodeResult>& res) {
  std::vector<std::vector<int>> hyps, refs;
  double steps = 0, len = 0;
  for (std::size_t i = 0; i < res.size(); ++i) {
    hyps.push_back(res[i].tokens);
    refs.push_back(ds.pairs[i].tgt);
    steps += res[i].n_steps;
    len += static_cast<double>(res[i].out_len);
  }
  const double n = static_cast<double>(res.size());
  return {metrics::exact_match(hyps, refs), metrics::token_accuracy(hyps, refs), metrics::corpus_bleu(hyps, refs),
          steps / n, len / n};
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string join(const std::vector<int>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? " " : "") + std::to_string(xs[i]);
  return s;
}

int cmd_gen_data(const Common& c) {
  const RunConfig cfg = resolve(c);
  Outputs out(c.out);
  out.write("config.txt", config_record(cfg));
  const data::Splits s = data::generate_splits(cfg.task, cfg.sizes, cfg.model.vocab_size, cfg.data_seed);
  data::save(out.file("train.tsv"), s.train);
  data::save(out.file("dev.tsv"), s.dev);
  data::save(out.file("test.tsv"), s.test);
  const data::Dataset* all[] = {&s.train, &s.dev, &s.test};
  out.write("stats.md", data::stats_table(all));
  out.commit();
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& resume) {
  RunConfig cfg = resolve(c);
  // ABS checkpoints record the only engine they support.
  if (!posenc::permits_reuse(cfg.model.pe) && cfg.decode.mode == decoding::Mode::incremental) {
    std::cerr << "note: ABS decodes in recompute mode\n";
    cfg.decode.mode = decoding::Mode::recompute;
  }
  const data::Dataset train = data::load(fs::path(data_dir) / "train.tsv", cfg.model.vocab_size);
  const data::Dataset dev = data::load(fs::path(data_dir) / "dev.tsv", cfg.model.vocab_size);
  Outputs out(c.out);
  out.write("config.txt", config_record(cfg));
  Model model(cfg.model);
  training::Trainer trainer(model, cfg.train);
  if (!resume.empty()) trainer.restore_state(load_checkpoint(resume));
  const auto metric = [&](const Model& m, std::span<const data::Pair> pairs) {
    data::Dataset d;
    d.pairs.assign(pairs.begin(), pairs.end());
    return score(d, decode_all(m, cfg, d)).em;
  };
  std::ofstream csv(out.file("metrics.csv"));
  csv << "step,train_loss,dev_loss,dev_metric\n";
  const auto result = training::train(trainer, train, &dev, metric, [&](const training::ValidationRow& r) {
    csv << r.step << ',' << fixed(r.train_loss) << ',' << fixed(r.dev_loss) << ',' << fixed(r.dev_metric) << '\n';
    csv.flush();
    std::cerr << "step " << r.step << " train_loss " << fixed(r.train_loss, 4) << " dev_loss "
              << fixed(r.dev_loss, 4) << " dev_em " << fixed(r.dev_metric, 4) << '\n';
  });
  save_checkpoint(out.file("state.ckpt"), trainer.state());
  if (result.diverged) {
    std::cerr << "training diverged: " << result.message << " (last validated parameters kept)\n";
  }
  save_checkpoint(out.file("model.ckpt"), snapshot(model.parameters(), cfg.to_text()));
  out.commit();
  return result.diverged ? 3 : 0;
}

int cmd_decode(const Common& c, const std::string& model_path, const std::string& input) {
  LoadedModel lm = load_model(model_path);
  const RunConfig cfg = resolve(c, &lm.cfg);
  const data::Dataset ds = data::load(input, cfg.model.vocab_size);
  Outputs out(c.out);
  out.write("config.txt", config_record(cfg));
  const auto res = decode_all(*lm.model, cfg, ds);
  std::ostringstream os;
  for (std::size_t i = 0; i < res.size(); ++i)
    os << i << '\t' << res[i].n_steps << '\t' << res[i].out_len << '\t' << fixed(res[i].wall_time_ms, 4) << '\t'
       << join(res[i].tokens) << '\n';
  out.write("decode.tsv", os.str());
  out.commit();
  return 0;
}

int cmd_eval(const Common& c, const std::string& model_path, const std::string& input) {
  LoadedModel lm = load_model(model_path);
  const RunConfig cfg = resolve(c, &lm.cfg);
  const data::Dataset ds = data::load(input, cfg.model.vocab_size);
  Outputs out(c.out);
  out.write("config.txt", config_record(cfg));
  const Quality q = score(ds, decode_all(*lm.model, cfg, ds));
  out.write("eval.txt", "exact_match=" + fixed(q.em) + "\ntoken_accuracy=" + fixed(q.token_acc) +
                            "\nbleu=" + fixed(q.bleu) + "\nmean_steps=" + fixed(q.steps) +
                            "\nmean_len=" + fixed(q.len) + "\n");
  out.commit();
  return 0;
}

int cmd_bench(const Common& c, const std::vector<std::string>& model_paths, const std::string& input) {
  RunConfig cfg = resolve(c);
  const data::Dataset ds = data::load(input, cfg.model.vocab_size);
  std::vector<LoadedModel> models;
  for (const auto& p : model_paths) models.push_back(load_model(p));
  Outputs out(c.out);
  out.write("config.txt", config_record(cfg));
  std::vector<bench::System> systems;
  for (const auto& lm : models) {
    decoding::Options o = cfg.decode;
    const std::string label = label_of(*lm.model);
    if (lm.model->config().head == HeadKind::l2r || !posenc::permits_reuse(lm.model->config().pe)) {
      o.mode = decoding::Mode::recompute;
      systems.push_back({label, lm.model.get(), o});
      continue;
    }
    o.mode = decoding::Mode::incremental;
    systems.push_back({label, lm.model.get(), o});
    o.mode = decoding::Mode::recompute;
    systems.push_back({label, lm.model.get(), o});
  }
  std::vector<std::vector<int>> sources;
  std::size_t longest = 0;
  for (const auto& p : ds.pairs) {
    sources.push_back(p.src);
    longest = std::max(longest, p.src.size());
  }
  bench::BenchOptions bo;
  bo.budgets = cfg.bench_budgets;
  bo.repeats = cfg.bench_repeats;
  bo.warmup = cfg.bench_warmup;
  // The smallest budget that still fits every source mirrors single-instance decoding.
  if (bo.budgets.empty() || bo.budgets.front() > longest) bo.budgets.insert(bo.budgets.begin(), longest);
  const std::string task = ds.name;
  const auto rows = bench::run_bench(systems, task, sources, bo);
  out.write("bench.csv", bench::to_csv(rows));
  out.write("bench.md", bench::to_markdown(rows));

  std::string bins;
  std::vector<std::size_t> lens;
  for (const auto& s : sources) lens.push_back(s.size());
  const auto edges = bench::default_length_edges();
  for (std::size_t i = 0; i < systems.size(); ++i) {
    std::vector<double> lat;
    for (const auto& s : sources) {
      std::vector<std::vector<int>> one{s};
      lat.push_back(decoding::batch_decode(*systems[i].model, one, s.size(), systems[i].options).results[0].wall_time_ms);
    }
    const auto b = bench::length_bins(lens, lat, edges);
    bins += bench::length_bins_csv(systems[i].label + "/" + std::string(decoding::mode_name(systems[i].options.mode)),
                                   b, i == 0);
  }
  out.write("length_bins.csv", bins);
  std::ostringstream env;
  env << "threads=" << kernels::max_threads() << '\n';
  out.write("environment.txt", env.str());
  out.commit();
  return 0;
}

int cmd_flops(const Common& c, const std::string& model_path, const std::string& input) {
  LoadedModel lm = load_model(model_path);
  const RunConfig cfg = resolve(c, &lm.cfg);
  const data::Dataset ds = data::load(input, cfg.model.vocab_size);
  Outputs out(c.out);
  out.write("config.txt", config_record(cfg));
  const bench::System sys{label_of(*lm.model), lm.model.get(), cfg.decode};
  std::ostringstream os;
  os << "id,src_len,total";
  for (std::size_t k = 0; k < flops::kComponentCount; ++k)
    os << ',' << flops::component_name(static_cast<flops::Component>(k));
  os << '\n';
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const auto rep = bench::decode_flops(sys, ds.pairs[i].src);
    os << i << ',' << ds.pairs[i].src.size() << ',' << rep.total;
    for (auto v : rep.by_component) os << ',' << v;
    os << '\n';
  }
  out.write("flops.csv", os.str());
  out.commit();
  return 0;
}

int cmd_sweep_eos(const Common& c, const std::string& model_path, const std::string& input) {
  LoadedModel lm = load_model(model_path);
  RunConfig cfg = resolve(c, &lm.cfg);
  if (lm.model->config().head != HeadKind::insertion) throw Error("sweep-eos needs an insertion model");
  const data::Dataset ds = data::load(input, cfg.model.vocab_size);
  Outputs out(c.out);
  out.write("config.txt", config_record(cfg));
  std::ostringstream os;
  os << "beta,exact_match,bleu,mean_len,mean_steps\n";
  double best_beta = 0.0, best_em = -1.0;
  for (int k = 0; k <= 10; ++k) {
    cfg.decode.eos_penalty = 0.5 * k;
    const Quality q = score(ds, decode_all(*lm.model, cfg, ds));
    os << fixed(cfg.decode.eos_penalty, 1) << ',' << fixed(q.em) << ',' << fixed(q.bleu) << ',' << fixed(q.len)
       << ',' << fixed(q.steps) << '\n';
    if (q.em > best_em) {
      best_em = q.em;
      best_beta = cfg.decode.eos_penalty;
    }
  }
  out.write("sweep_eos.csv", os.str());
  out.write("selected.txt", "eos_penalty=" + fixed(best_beta, 1) + "\nexact_match=" + fixed(best_em) + "\n");
  out.commit();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fracpos: insertion transformer with fractional positional encodings"};
  app.set_version_flag("--version", FRACPOS_VERSION);
  app.require_subcommand(1);

  Common gen, tr, dec, ev, be, fl, sw;
  std::string data_dir, resume, model_path, input;
  std::vector<std::string> models;

  auto* g = app.add_subcommand("gen-data", "Generate train/dev/test splits of a synthetic task");
  add_common(g, gen);
  auto* t = app.add_subcommand("train", "Train a model");
  add_common(t, tr);
  t->add_option("--data", data_dir, "Directory holding train.tsv and dev.tsv")->required();
  t->add_option("--resume", resume, "Training state to continue from");
  auto* d = app.add_subcommand("decode", "Decode a dataset");
  add_common(d, dec);
  d->add_option("--model", model_path, "Model checkpoint")->required()->check(CLI::ExistingFile);
  d->add_option("--input", input, "Dataset file")->required()->check(CLI::ExistingFile);
  auto* e = app.add_subcommand("eval", "Decode and score a dataset");
  add_common(e, ev);
  e->add_option("--model", model_path, "Model checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--input", input, "Dataset file")->required()->check(CLI::ExistingFile);
  auto* b = app.add_subcommand("bench", "Latency/steps/FLOPs table across models and batch budgets");
  add_common(b, be);
  b->add_option("--model", models, "Model checkpoints")->required()->check(CLI::ExistingFile);
  b->add_option("--input", input, "Dataset file")->required()->check(CLI::ExistingFile);
  auto* f = app.add_subcommand("flops", "Per-instance FLOPs breakdown");
  add_common(f, fl);
  f->add_option("--model", model_path, "Model checkpoint")->required()->check(CLI::ExistingFile);
  f->add_option("--input", input, "Dataset file")->required()->check(CLI::ExistingFile);
  auto* s = app.add_subcommand("sweep-eos", "Pick the EOS penalty on a dev set");
  add_common(s, sw);
  s->add_option("--model", model_path, "Model checkpoint")->required()->check(CLI::ExistingFile);
  s->add_option("--input", input, "Dev dataset file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr, data_dir, resume);
    if (d->parsed()) return cmd_decode(dec, model_path, input);
    if (e->parsed()) return cmd_eval(ev, model_path, input);
    if (b->parsed()) return cmd_bench(be, models, input);
    if (f->parsed()) return cmd_flops(fl, model_path, input);
    if (s->parsed()) return cmd_sweep_eos(sw, model_path, input);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}
