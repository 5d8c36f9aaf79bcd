// spectra: spectral diagnostics, singular-vector interventions and spectrally
// restricted finetuning on safetensors checkpoints.
//
// Exit codes: 0 success, 2 usage/format/I-O error, 3 data mismatch.

#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "parallel.hpp"
#include "spectra/spectra.hpp"

namespace {

using namespace spectra;
using tools::parallel_map;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

// ---------------------------------------------------------------------------
// Argument helpers

RankRange parse_range(const std::string& text) {
  if (text == "all") return {0, std::numeric_limits<std::size_t>::max()};
  const auto dots = text.find("..");
  if (dots == std::string::npos) throw InvalidArgument("rank range '" + text + "' must look like A..B or 'all'");
  try {
    std::size_t used = 0;
    const std::string a = text.substr(0, dots), b = text.substr(dots + 2);
    const unsigned long lo = std::stoul(a, &used);
    if (used != a.size()) throw std::invalid_argument(a);
    const unsigned long hi = std::stoul(b, &used);
    if (used != b.size()) throw std::invalid_argument(b);
    if (lo > hi) throw InvalidArgument("rank range '" + text + "' is reversed");
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw InvalidArgument("rank range '" + text + "' must look like A..B or 'all'");
  }
}

// "none", "all", "A..B" (clamped to p) or a comma list "0,3,7" (validated).
RankSet parse_rank_set(const std::string& text, std::size_t p) {
  if (text == "none" || text.empty()) return {};
  if (text == "all" || text.find("..") != std::string::npos) {
    const RankRange r = parse_range(text).clamped(p);
    return RankSet::range(r.begin, r.end);
  }
  std::vector<std::size_t> idx;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      idx.push_back(std::stoul(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw InvalidArgument("bad rank list '" + text + "'");
    }
  }
  RankSet set(std::move(idx));
  set.require_within(p);
  return set;
}

DType parse_dtype(const std::string& s) {
  if (s == "f32" || s == "F32") return DType::F32;
  if (s == "f64" || s == "F64") return DType::F64;
  throw InvalidArgument("unknown dtype '" + s + "'");
}

struct OutputOptions {
  std::string out = "-";
  std::string format = "csv";
};

void emit(const Report& report, const OutputOptions& o) {
  std::ofstream file;
  std::ostream* os = &std::cout;
  if (o.out != "-") {
    file.open(o.out, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot open " + o.out + " for writing");
    os = &file;
  }
  if (o.format == "json")
    write_json(report, *os);
  else
    write_csv(report, *os);
  if (!*os) throw IoError("write failed: " + o.out);
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

template <class T>
void require_nonempty(const Selection<T>& sel, const std::string& pattern) {
  if (sel.items.empty()) throw FormatError("no 2-D tensors match '" + pattern + "'");
}

struct LayerOptions {
  std::string pattern = "*";
  std::size_t min_dim = 1;
};

void add_layer_options(CLI::App* cmd, LayerOptions& o) {
  cmd->add_option("--layers", o.pattern, "Glob over tensor names ('*' and '?')")->capture_default_str();
  cmd->add_option("--min-dim", o.min_dim, "Skip matrices with a dimension below this")->capture_default_str();
}

void add_output_options(CLI::App* cmd, OutputOptions& o) {
  cmd->add_option("--out", o.out, "Output path, '-' for stdout")->capture_default_str();
  cmd->add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
}

// ---------------------------------------------------------------------------
// align

struct AlignArgs {
  std::string pre, post, ranks = "0..30";
  LayerOptions layers;
  OutputOptions output;
};

int run_align(const AlignArgs& a) {
  const RankRange range = parse_range(a.ranks);
  const auto sel = match_layers(read_checkpoint(a.pre), read_checkpoint(a.post), a.layers.pattern, a.layers.min_dim);
  print_warnings(sel.warnings);
  require_nonempty(sel, a.layers.pattern);

  const auto series = parallel_map<AlignmentSeries>(sel.items.size(), [&](std::size_t i) {
    const LayerPair& lp = sel.items[i];
    const auto pre = svd(lp.pre, lp.name);
    const auto post = svd(lp.post, lp.name);
    return align_factorizations(pre, post, range.clamped(pre.rank()));
  });

  Report r{"align", {"layer", "rank", "left", "right", "degenerate"}, {}};
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.ranks.size(); ++k)
      r.add({s.layer, static_cast<std::int64_t>(s.ranks[k]), s.left[k], s.right[k], static_cast<bool>(s.degenerate[k])});
  emit(r, a.output);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// delta

int run_delta(const AlignArgs& a) {
  const RankRange range = parse_range(a.ranks);
  const auto sel = match_layers(read_checkpoint(a.pre), read_checkpoint(a.post), a.layers.pattern, a.layers.min_dim);
  print_warnings(sel.warnings);
  require_nonempty(sel, a.layers.pattern);

  struct Row {
    DeltaSpectrum delta;
    AlignmentSeries stability;
  };
  const auto rows = parallel_map<Row>(sel.items.size(), [&](std::size_t i) {
    const LayerPair& lp = sel.items[i];
    const auto pre = svd(lp.pre, lp.name);
    const auto post = svd(lp.post, lp.name);
    const auto upd = svd(lp.post - lp.pre, lp.name);
    const RankRange rr = range.clamped(pre.rank());
    return Row{delta_spectrum(pre, upd, rr), align_factorizations(pre, post, rr)};
  });

  Report r{"delta",
           {"layer", "rank", "ratio", "align_u", "align_v", "align_left", "align_right", "zero_pre", "degenerate"},
           {}};
  for (const auto& row : rows) {
    const auto& d = row.delta;
    for (std::size_t k = 0; k < d.ranks.size(); ++k) {
      r.add({d.layer, static_cast<std::int64_t>(d.ranks[k]), d.ratios[k], d.align_u[k], d.align_v[k],
             row.stability.left[k], row.stability.right[k], static_cast<bool>(d.zero_pre[k]),
             static_cast<bool>(d.degenerate[k] || row.stability.degenerate[k])});
    }
  }
  emit(r, a.output);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// spectrum

struct SpectrumArgs {
  std::string pre, post, weighting = "sigma";
  double tail_frac = 0.1;
  LayerOptions layers;
  OutputOptions output;
};

int run_spectrum(const SpectrumArgs& a) {
  SpectrumChangeOptions opt;
  opt.tail_fraction = a.tail_frac;
  opt.weighting = a.weighting == "sigma2" ? EntropyWeighting::SigmaSquared : EntropyWeighting::Sigma;
  tail_count(1, opt.tail_fraction);  // validates the fraction before any work

  const auto sel = match_layers(read_checkpoint(a.pre), read_checkpoint(a.post), a.layers.pattern, a.layers.min_dim);
  print_warnings(sel.warnings);
  require_nonempty(sel, a.layers.pattern);

  const auto stats = parallel_map<SpectrumChangeStats>(sel.items.size(), [&](std::size_t i) {
    const LayerPair& lp = sel.items[i];
    return spectrum_change(svd(lp.pre, lp.name).s, svd(lp.post, lp.name).s, opt);
  });

  Report r{"spectrum", {"layer", "n_sv", "rsd", "mrc", "maxrc", "t1rc", "tailrc", "er_pre", "er_post", "d_er"}, {}};
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const auto& s = stats[i];
    r.add({sel.items[i].name, static_cast<std::int64_t>(s.n_sv), s.rsd, s.mrc, s.maxrc, s.t1rc, s.tailrc, s.er_pre,
           s.er_post, s.d_er});
  }
  emit(r, a.output);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// variance

struct VarianceArgs {
  std::string path;
  double threshold = 0.9;
  LayerOptions layers;
  OutputOptions output;
};

int run_variance(const VarianceArgs& a) {
  if (!(a.threshold > 0.0 && a.threshold <= 1.0)) throw InvalidArgument("--threshold must lie in (0, 1]");
  const auto sel = select_layers(read_checkpoint(a.path), a.layers.pattern, a.layers.min_dim);
  print_warnings(sel.warnings);
  require_nonempty(sel, a.layers.pattern);

  const auto spectra = parallel_map<std::vector<double>>(
      sel.items.size(), [&](std::size_t i) { return svd(sel.items[i].value, sel.items[i].name).s; });

  Report r{"variance", {"layer", "k", "cumulative_ev", "k_at_threshold"}, {}};
  for (std::size_t i = 0; i < spectra.size(); ++i) {
    const auto& s = spectra[i];
    const auto k_thr = static_cast<std::int64_t>(rank_for_energy(s, a.threshold));
    for (std::size_t k = 1; k <= s.size(); ++k)
      r.add({sel.items[i].name, static_cast<std::int64_t>(k), explained_variance(s, k), k_thr});
  }
  emit(r, a.output);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// intervene

struct InterveneArgs {
  std::string mode;
  std::vector<std::string> inputs;
  std::string ranks = "0..30";
  std::string side = "both";
  std::string direction = "bottom_up";
  std::string count = "0";
  std::uint64_t seed = 0;
  std::string out_ckpt, out_ckpt_b, dtype = "f64";
  LayerOptions layers;
};

int run_intervene(const InterveneArgs& a) {
  const bool two_inputs = a.mode == "replace" || a.mode == "swap";
  if (a.inputs.size() != (two_inputs ? 2u : 1u)) {
    throw InvalidArgument("mode " + a.mode + " takes " + (two_inputs ? "two input checkpoints" : "one input checkpoint"));
  }
  if (a.out_ckpt.empty()) throw InvalidArgument("--out-ckpt is required");
  if (a.mode == "swap" && a.out_ckpt_b.empty()) throw InvalidArgument("swap needs --out-ckpt-b for the second model");
  const DType dtype = parse_dtype(a.dtype);
  const Side side = a.side == "left" ? Side::Left : a.side == "right" ? Side::Right : Side::Both;
  const MaskDirection dir = a.direction == "top_down" ? MaskDirection::TopDown : MaskDirection::BottomUp;

  CheckpointManifest first = read_checkpoint(a.inputs[0]);
  CheckpointManifest second = two_inputs ? read_checkpoint(a.inputs[1]) : CheckpointManifest{};

  // Layer names to edit; for two-model modes they must agree in shape.
  std::vector<std::string> names;
  if (two_inputs) {
    const auto sel = match_layers(first, second, a.layers.pattern, a.layers.min_dim);
    print_warnings(sel.warnings);
    require_nonempty(sel, a.layers.pattern);
    for (const auto& lp : sel.items) names.push_back(lp.name);
  } else {
    const auto sel = select_layers(first, a.layers.pattern, a.layers.min_dim);
    print_warnings(sel.warnings);
    require_nonempty(sel, a.layers.pattern);
    for (const auto& nm : sel.items) names.push_back(nm.name);
  }

  struct Edited {
    Matrix a, b;
    std::string ranks;
  };
  const auto edited = parallel_map<Edited>(names.size(), [&](std::size_t i) {
    const std::string& name = names[i];
    const Matrix wa = first.entries.at(name).as_matrix();
    const auto fa = svd(wa, name);
    const std::size_t p = fa.rank();
    if (a.mode == "mask") {
      const std::size_t count = a.count == "all" ? p : std::stoul(a.count);
      const RankSet masked = mask_ranks(p, count, dir);
      return Edited{mask_by_order(fa, count, dir), {}, std::to_string(masked.size())};
    }
    const RankSet ranks = parse_rank_set(a.ranks, p);
    const std::string desc = std::to_string(ranks.size());
    if (a.mode == "zero") return Edited{zero_vectors(fa, ranks), {}, desc};
    if (a.mode == "randomize") return Edited{randomize_vectors(fa, ranks, a.seed), {}, desc};
    const auto fb = svd(second.entries.at(name).as_matrix(), name);
    if (a.mode == "replace") return Edited{replace_vectors(fa, fb, ranks, side), {}, desc};
    auto [x, y] = swap_vectors(fa, fb, ranks);
    return Edited{std::move(x), std::move(y), desc};
  });

  auto stamp = [&](CheckpointManifest& m) {
    m.metadata["spectra.intervention"] = a.mode;
    m.metadata["spectra.layers"] = a.layers.pattern;
    if (a.mode == "mask") {
      m.metadata["spectra.count"] = a.count;
      m.metadata["spectra.direction"] = a.direction;
    } else {
      m.metadata["spectra.ranks"] = a.ranks;
    }
    if (a.mode == "replace") m.metadata["spectra.side"] = a.side;
    if (a.mode == "randomize") {
      m.metadata["spectra.seed"] = std::to_string(a.seed);
      m.metadata["spectra.orthogonality"] = "not preserved";
    }
  };

  std::cout << "# spectra-csv " << kCsvSchemaVersion << " intervene\nlayer,ranks_edited,frobenius_change\n";
  CheckpointManifest out_a = first;
  CheckpointManifest out_b = second;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string& name = names[i];
    const Matrix before = first.entries.at(name).as_matrix();
    std::cout << name << ',' << edited[i].ranks << ',' << format_number(frobenius(edited[i].a - before)) << '\n';
    out_a.entries[name] = TensorRecord::from_matrix(edited[i].a, dtype);
    if (a.mode == "swap") out_b.entries[name] = TensorRecord::from_matrix(edited[i].b, dtype);
  }
  stamp(out_a);
  write_checkpoint(out_a, a.out_ckpt, dtype);
  if (a.mode == "swap") {
    stamp(out_b);
    write_checkpoint(out_b, a.out_ckpt_b, dtype);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// trajectory

struct TrajectoryArgs {
  std::vector<std::string> paths;
  std::size_t topk = 30;
  LayerOptions layers;
  OutputOptions output;
};

int run_trajectory(const TrajectoryArgs& a) {
  if (a.paths.empty()) throw InvalidArgument("trajectory needs at least one checkpoint");
  if (a.topk == 0) throw InvalidArgument("--topk must be >= 1");
  std::vector<CheckpointManifest> ckpts;
  for (const auto& p : a.paths) ckpts.push_back(read_checkpoint(p));

  // Layers of the first checkpoint that exist in every other one.
  std::vector<std::string> names;
  {
    const auto sel = select_layers(ckpts[0], a.layers.pattern, a.layers.min_dim);
    print_warnings(sel.warnings);
    for (const auto& nm : sel.items) {
      for (std::size_t c = 1; c < ckpts.size(); ++c) {
        const auto it = ckpts[c].entries.find(nm.name);
        if (it == ckpts[c].entries.end()) throw ShapeError("tensor '" + nm.name + "' missing from " + a.paths[c]);
        if (it->second.shape != ckpts[0].entries.at(nm.name).shape) {
          throw ShapeError("shape mismatch for tensor '" + nm.name + "' in " + a.paths[c]);
        }
      }
      names.push_back(nm.name);
    }
    if (names.empty()) throw FormatError("no 2-D tensors match '" + a.layers.pattern + "'");
  }

  const auto mats = parallel_map<Matrix>(names.size(), [&](std::size_t i) {
    std::vector<SvdFactorization> seq;
    for (const auto& c : ckpts) seq.push_back(svd(c.entries.at(names[i]).as_matrix(), names[i]));
    return trajectory_alignment(seq, std::min(a.topk, seq[0].rank()));
  });

  Report r{"trajectory", {"layer", "i", "j", "value"}, {}};
  for (std::size_t l = 0; l < names.size(); ++l)
    for (std::size_t i = 0; i < mats[l].rows(); ++i)
      for (std::size_t j = 0; j < mats[l].cols(); ++j)
        r.add({names[l], static_cast<std::int64_t>(i), static_cast<std::int64_t>(j), mats[l](i, j)});
  emit(r, a.output);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// srf-train

struct SrfArgs {
  std::string base, layer, task = "synth-recover", optimizer = "sgd";
  std::size_t k = 0, width = 8, steps = 2000, batch = 64, eval_size = 256;
  long outside_rank = -1;
  double lr = 0.05, target_scale = 0.5;
  std::uint64_t seed = 10;
  OutputOptions output;
  std::string out_m;
};

int run_srf_train(const SrfArgs& a) {
  const CheckpointManifest m = read_checkpoint(a.base);
  const auto it = m.entries.find(a.layer);
  if (it == m.entries.end()) throw FormatError("layer '" + a.layer + "' not found in " + a.base);
  const auto base = svd(it->second.as_matrix(), a.layer);

  SpectralAdapter adapter(base, a.k, a.width);
  SyntheticTarget target;
  if (a.task == "synth-recover") {
    target = in_block_target(base, a.k, a.width, a.target_scale, a.seed);
  } else {
    std::size_t j = 0;
    if (a.outside_rank >= 0) {
      j = static_cast<std::size_t>(a.outside_rank);
      if (j >= a.k && j < a.k + a.width) throw InvalidArgument("--outside-rank lies inside the trainable interval");
    } else if (a.k + a.width < base.rank()) {
      j = a.k + a.width;
    } else if (a.k > 0) {
      j = a.k - 1;
    } else {
      throw InvalidArgument("synth-outside needs a rank outside the trainable interval");
    }
    target = single_rank_target(base, j, a.target_scale);
  }

  TrainConfig cfg;
  cfg.steps = a.steps;
  cfg.learning_rate = a.lr;
  cfg.batch_size = a.batch;
  cfg.seed = a.seed;
  cfg.eval_size = a.eval_size;
  cfg.optimizer.kind = a.optimizer == "adam" ? OptimizerKind::Adam : OptimizerKind::Sgd;

  const LinearTeacher teacher(target.weight);
  const TrainLog log = train_srf(adapter, teacher, cfg);

  Report r{"srf-train", {"step", "loss", "grad_norm"}, {}};
  r.add({std::int64_t{0}, log.initial_loss, 0.0});
  for (const auto& s : log.steps) r.add({static_cast<std::int64_t>(s.step), s.loss, s.grad_norm});
  emit(r, a.output);

  if (!a.out_m.empty()) {
    CheckpointManifest out;
    out.entries[a.layer + ".srf_block"] = TensorRecord::from_matrix(log.final_block());
    out.metadata = {{"spectra.layer", a.layer},
                    {"spectra.k", std::to_string(a.k)},
                    {"spectra.width", std::to_string(a.width)},
                    {"spectra.task", a.task},
                    {"spectra.seed", std::to_string(a.seed)}};
    write_checkpoint(out, a.out_m);
  }
  std::cerr << "final loss " << format_number(log.final_loss()) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// correlate

struct CorrelateArgs {
  std::string table;
  double q = 0.05;
  OutputOptions output;
};

int run_correlate(const CorrelateArgs& a) {
  std::ifstream in(a.table);
  if (!in) throw IoError("cannot open " + a.table);
  std::vector<std::string> header;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  long gcol = -1, xcol = -1, ycol = -1;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (header.empty()) {
      header = fields;
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "group") gcol = static_cast<long>(i);
        if (header[i] == "x") xcol = static_cast<long>(i);
        if (header[i] == "y") ycol = static_cast<long>(i);
      }
      if (xcol < 0 || ycol < 0) throw FormatError(a.table + ": header needs columns 'x' and 'y'");
      continue;
    }
    if (fields.size() != header.size()) throw FormatError(a.table + ":" + std::to_string(lineno) + ": wrong field count");
    auto num = [&](long c) {
      try {
        std::size_t used = 0;
        const double v = std::stod(fields[c], &used);
        if (used != fields[c].size() || !std::isfinite(v)) throw std::invalid_argument(fields[c]);
        return v;
      } catch (const std::logic_error&) {
        throw FormatError(a.table + ":" + std::to_string(lineno) + ": bad number '" + fields[c] + "'");
      }
    };
    auto& g = groups[gcol >= 0 ? fields[gcol] : std::string("all")];
    g.first.push_back(num(xcol));
    g.second.push_back(num(ycol));
  }
  if (groups.empty()) throw FormatError(a.table + ": no data rows");

  std::vector<std::string> names;
  std::vector<CorrelationResult> res;
  std::vector<double> pvals;
  for (const auto& [name, xy] : groups) {
    try {
      res.push_back(pearson(xy.first, xy.second));
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("group '" + name + "': " + e.what());
    }
    names.push_back(name);
    pvals.push_back(res.back().p_value);
  }
  const auto rejected = bh_fdr(pvals, a.q);

  Report r{"correlate", {"group", "n", "r", "p_value", "rejected"}, {}};
  for (std::size_t i = 0; i < names.size(); ++i) {
    const bool rej = std::binary_search(rejected.begin(), rejected.end(), i);
    r.add({names[i], static_cast<std::int64_t>(res[i].n), res[i].r, res[i].p_value, rej});
  }
  emit(r, a.output);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spectra: spectral structure of weight checkpoints"};
  app.require_subcommand(1);
  std::function<int()> action;

  AlignArgs align_args;
  auto* align = app.add_subcommand("align", "Per-rank alignment of pre/post singular vectors");
  align->add_option("pre", align_args.pre, "Pretrained checkpoint")->required();
  align->add_option("post", align_args.post, "Finetuned checkpoint")->required();
  align->add_option("--ranks", align_args.ranks, "Rank range A..B (half-open) or 'all'")->capture_default_str();
  add_layer_options(align, align_args.layers);
  add_output_options(align, align_args.output);
  align->callback([&] { action = [&] { return run_align(align_args); }; });

  AlignArgs delta_args;
  auto* delta = app.add_subcommand("delta", "Singular-value ratios and alignment of the cumulative update");
  delta->add_option("pre", delta_args.pre, "Pretrained checkpoint")->required();
  delta->add_option("post", delta_args.post, "Finetuned checkpoint")->required();
  delta->add_option("--ranks", delta_args.ranks, "Rank range A..B (half-open) or 'all'")->capture_default_str();
  add_layer_options(delta, delta_args.layers);
  add_output_options(delta, delta_args.output);
  delta->callback([&] { action = [&] { return run_delta(delta_args); }; });

  SpectrumArgs spec_args;
  auto* spectrum = app.add_subcommand("spectrum", "Spectral change statistics per layer");
  spectrum->add_option("pre", spec_args.pre, "Pretrained checkpoint")->required();
  spectrum->add_option("post", spec_args.post, "Finetuned checkpoint")->required();
  spectrum->add_option("--tail-frac", spec_args.tail_frac, "Fraction of trailing ranks for TailRC")->capture_default_str();
  spectrum->add_option("--er-weighting", spec_args.weighting, "Effective-rank weights: sigma or sigma2")
      ->check(CLI::IsMember({"sigma", "sigma2"}))
      ->capture_default_str();
  add_layer_options(spectrum, spec_args.layers);
  add_output_options(spectrum, spec_args.output);
  spectrum->callback([&] { action = [&] { return run_spectrum(spec_args); }; });

  VarianceArgs var_args;
  auto* variance = app.add_subcommand("variance", "Cumulative explained variance per rank");
  variance->add_option("path", var_args.path, "Checkpoint")->required();
  variance->add_option("--threshold", var_args.threshold, "Energy threshold for k_at_threshold")->capture_default_str();
  add_layer_options(variance, var_args.layers);
  add_output_options(variance, var_args.output);
  variance->callback([&] { action = [&] { return run_variance(var_args); }; });

  InterveneArgs int_args;
  auto* intervene = app.add_subcommand("intervene", "Replace, swap, zero, randomize or mask singular vectors");
  intervene->add_option("mode", int_args.mode, "replace|swap|zero|randomize|mask")
      ->required()
      ->check(CLI::IsMember({"replace", "swap", "zero", "randomize", "mask"}));
  intervene->add_option("inputs", int_args.inputs, "Input checkpoint(s)")->required();
  intervene->add_option("--ranks", int_args.ranks, "none, all, A..B or a comma list")->capture_default_str();
  intervene->add_option("--side", int_args.side, "replace: left, right or both")
      ->check(CLI::IsMember({"left", "right", "both"}))
      ->capture_default_str();
  intervene->add_option("--count", int_args.count, "mask: number of ranks to remove, or 'all'")->capture_default_str();
  intervene->add_option("--direction", int_args.direction, "mask: top_down or bottom_up")
      ->check(CLI::IsMember({"top_down", "bottom_up"}))
      ->capture_default_str();
  intervene->add_option("--seed", int_args.seed, "randomize: RNG seed")->capture_default_str();
  intervene->add_option("--out-ckpt", int_args.out_ckpt, "Output checkpoint");
  intervene->add_option("--out-ckpt-b", int_args.out_ckpt_b, "swap: output for the second model");
  intervene->add_option("--dtype", int_args.dtype, "Output dtype f32 or f64")->capture_default_str();
  add_layer_options(intervene, int_args.layers);
  intervene->callback([&] { action = [&] { return run_intervene(int_args); }; });

  TrajectoryArgs traj_args;
  auto* trajectory = app.add_subcommand("trajectory", "Pairwise top-k alignment across a checkpoint sequence");
  trajectory->add_option("paths", traj_args.paths, "Checkpoints in training order")->required();
  trajectory->add_option("--topk", traj_args.topk, "Ranks averaged per pair")->capture_default_str();
  add_layer_options(trajectory, traj_args.layers);
  add_output_options(trajectory, traj_args.output);
  trajectory->callback([&] { action = [&] { return run_trajectory(traj_args); }; });

  SrfArgs srf_args;
  auto* srf = app.add_subcommand("srf-train", "Train a spectral block on a synthetic regression task");
  srf->add_option("--base", srf_args.base, "Checkpoint holding the base layer")->required();
  srf->add_option("--layer", srf_args.layer, "Tensor name of the base layer")->required();
  srf->add_option("--k", srf_args.k, "First rank of the trainable interval")->capture_default_str();
  srf->add_option("--width", srf_args.width, "Width of the trainable interval")->capture_default_str();
  srf->add_option("--steps", srf_args.steps, "Optimizer steps")->capture_default_str();
  srf->add_option("--lr", srf_args.lr, "Learning rate")->capture_default_str();
  srf->add_option("--batch", srf_args.batch, "Batch size")->capture_default_str();
  srf->add_option("--eval-size", srf_args.eval_size, "Evaluation batch size")->capture_default_str();
  srf->add_option("--seed", srf_args.seed, "Seed for data and target")->capture_default_str();
  srf->add_option("--optimizer", srf_args.optimizer, "sgd or adam")
      ->check(CLI::IsMember({"sgd", "adam"}))
      ->capture_default_str();
  srf->add_option("--task", srf_args.task, "synth-recover or synth-outside")
      ->check(CLI::IsMember({"synth-recover", "synth-outside"}))
      ->capture_default_str();
  srf->add_option("--target-scale", srf_args.target_scale, "Scale of the synthetic target change")->capture_default_str();
  srf->add_option("--outside-rank", srf_args.outside_rank, "synth-outside: rank carrying the target change");
  srf->add_option("--out-m", srf_args.out_m, "Write the final block to this checkpoint");
  add_output_options(srf, srf_args.output);
  srf->callback([&] { action = [&] { return run_srf_train(srf_args); }; });

  CorrelateArgs corr_args;
  auto* corr = app.add_subcommand("correlate", "Pearson correlation per group with BH-FDR control");
  corr->add_option("--table", corr_args.table, "CSV with columns x,y and optional group")->required();
  corr->add_option("--fdr", corr_args.q, "FDR level q")->capture_default_str();
  add_output_options(corr, corr_args.output);
  corr->callback([&] { action = [&] { return run_correlate(corr_args); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    return action();
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}
