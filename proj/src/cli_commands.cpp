#include "srkit/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <utility>

#include "srkit/cost_model.hpp"
#include "srkit/evaluate.hpp"
#include "srkit/png_io.hpp"

namespace srkit {

namespace {

// ---------------------------------------------------------------------------
// Config schema

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& wanted, const std::string& where) {
  throw UsageError(where + ": key '" + key + "' expects " + wanted + ", got '" + value + "'");
}

long long parse_ll(const std::string& key, const std::string& value, const std::string& where) {
  size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "an integer", where);
  }
  if (used != value.size()) bad_value(key, value, "an integer", where);
  return v;
}

double parse_double(const std::string& key, const std::string& value, const std::string& where) {
  size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "a number", where);
  }
  if (used != value.size()) bad_value(key, value, "a number", where);
  return v;
}

bool parse_bool(const std::string& key, const std::string& value, const std::string& where) {
  std::string v = value;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, value, "a boolean (true/false)", where);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value,
                                const std::string& where) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string tok;
  while (std::getline(ss, tok, ','))
    out.push_back(static_cast<int>(parse_ll(key, trim(tok), where)));
  if (out.empty()) bad_value(key, value, "a comma-separated integer list", where);
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& schema() {
  auto i = [](int RunConfig::* f) {
    return [f](RunConfig& c, const std::string& v, const std::string& w) {
      c.*f = static_cast<int>(parse_ll("", v, w));
    };
  };
  auto i64 = [](std::int64_t RunConfig::* f) {
    return [f](RunConfig& c, const std::string& v, const std::string& w) {
      c.*f = parse_ll("", v, w);
    };
  };
  auto d = [](double RunConfig::* f) {
    return [f](RunConfig& c, const std::string& v, const std::string& w) {
      c.*f = parse_double("", v, w);
    };
  };
  auto b = [](bool RunConfig::* f) {
    return [f](RunConfig& c, const std::string& v, const std::string& w) {
      c.*f = parse_bool("", v, w);
    };
  };
  auto s = [](std::string RunConfig::* f) {
    return [f](RunConfig& c, const std::string& v, const std::string&) { c.*f = v; };
  };
  static const std::map<std::string, Setter> table = {
      {"variant", s(&RunConfig::variant)},
      {"blocks", i(&RunConfig::blocks)},
      {"units", i(&RunConfig::units)},
      {"channels", i(&RunConfig::channels)},
      {"group_size", i(&RunConfig::group_size)},
      {"eblock", b(&RunConfig::eblock)},
      {"recursive", b(&RunConfig::recursive)},
      {"local_cascading", b(&RunConfig::local_cascading)},
      {"global_cascading", b(&RunConfig::global_cascading)},
      {"scales",
       [](RunConfig& c, const std::string& v, const std::string& w) {
         c.scales = parse_int_list("scales", v, w);
       }},
      {"patch_size_lr", i(&RunConfig::patch_size_lr)},
      {"batch_size", i(&RunConfig::batch_size)},
      {"lr0", d(&RunConfig::lr0)},
      {"halve_every", i64(&RunConfig::halve_every)},
      {"total_steps", i64(&RunConfig::total_steps)},
      {"beta1", d(&RunConfig::beta1)},
      {"beta2", d(&RunConfig::beta2)},
      {"epsilon", d(&RunConfig::epsilon)},
      {"seed",
       [](RunConfig& c, const std::string& v, const std::string& w) {
         c.seed = static_cast<std::uint64_t>(parse_ll("seed", v, w));
       }},
      {"augment", b(&RunConfig::augment)},
      {"checkpoint_every", i64(&RunConfig::checkpoint_every)},
      {"log_every", i64(&RunConfig::log_every)},
      {"dataset", s(&RunConfig::dataset)},
      {"out_dir", s(&RunConfig::out_dir)},
      {"hr_width", i(&RunConfig::hr_width)},
      {"hr_height", i(&RunConfig::hr_height)},
      {"scale", i(&RunConfig::scale)},
  };
  return table;
}

std::string known_keys() {
  std::string out;
  for (const auto& [k, fn] : schema()) {
    (void)fn;
    out += out.empty() ? k : ", " + k;
  }
  return out;
}

// Inserts `.tag` before a trailing .csv (or appends it) to derive sibling
// output paths, e.g. report.csv -> report.x3.csv.
std::string suffixed_path(const std::string& path, const std::string& tag) {
  const std::string ext = ".csv";
  if (path.size() > ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0)
    return path.substr(0, path.size() - ext.size()) + "." + tag + ext;
  return path + "." + tag;
}

std::string fmt(double v, const char* pattern = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

}  // namespace

void apply_key_value(RunConfig& cfg, const std::string& key, const std::string& value,
                     const std::string& where) {
  auto it = schema().find(key);
  if (it == schema().end())
    throw UsageError(where + ": unknown key '" + key + "' (known keys: " + known_keys() + ")");
  try {
    it->second(cfg, value, where);
  } catch (const UsageError&) {
    throw UsageError(where + ": invalid value '" + value + "' for key '" + key + "'");
  }
  cfg.set_keys.insert(key);
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  const std::string text = detail::read_file_bytes(path, "config");
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = path + ":" + std::to_string(lineno);
    if (eq == std::string::npos)
      throw UsageError(where + ": expected key=value, got '" + line + "'");
    apply_key_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw UsageError("override '" + kv + "': expected key=value");
    apply_key_value(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)), "override");
  }
}

NetworkSpec to_network_spec(const RunConfig& cfg) {
  NetworkSpec s = make_network_spec(cfg.variant);
  if (cfg.is_set("blocks")) s.blocks = cfg.blocks;
  if (cfg.is_set("units")) s.units = cfg.units;
  if (cfg.is_set("channels")) s.channels = cfg.channels;
  if (cfg.is_set("group_size")) s.group_size = cfg.group_size;
  if (cfg.is_set("eblock")) s.eblock = cfg.eblock;
  if (cfg.is_set("recursive")) s.recursive = cfg.recursive;
  if (cfg.is_set("local_cascading")) s.local_cascading = cfg.local_cascading;
  if (cfg.is_set("global_cascading")) s.global_cascading = cfg.global_cascading;
  if (cfg.is_set("scales")) s.scales = cfg.scales;
  validate(s);
  return s;
}

TrainConfig to_train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.patch_size_lr = cfg.patch_size_lr;
  t.batch_size = cfg.batch_size;
  t.lr0 = cfg.lr0;
  t.halve_every = cfg.halve_every;
  t.total_steps = cfg.total_steps;
  t.beta1 = cfg.beta1;
  t.beta2 = cfg.beta2;
  t.epsilon = cfg.epsilon;
  t.scales = cfg.scales;
  t.seed = cfg.seed;
  t.augment = cfg.augment;
  t.checkpoint_every = cfg.checkpoint_every;
  t.log_every = cfg.log_every;
  validate(t);
  return t;
}

NetworkSpec infer_spec(const RawCheckpoint& raw) {
  NetworkSpec s;
  s.variant = "custom";

  const RawCheckpointEntry* entry_w = nullptr;
  for (const auto& e : raw.entries)
    if (e.name == "entry.w") entry_w = &e;
  if (!entry_w || entry_w->dims.size() != 4)
    throw DataError("checkpoint: no 'entry.w' conv entry; not a model checkpoint");
  s.channels = static_cast<int>(entry_w->dims[0]);

  // Use names = canonical non-shared entries plus every alias.
  std::vector<std::string> uses;
  for (const auto& e : raw.entries)
    if (e.name.rfind("shared.", 0) != 0) uses.push_back(e.name);
  for (const auto& [alias, canon] : raw.aliases) {
    (void)canon;
    uses.push_back(alias);
  }

  int max_b = -1, max_u = -1;
  bool pw = false, local = false, global_c = false;
  std::set<int> scales;
  for (const std::string& name : uses) {
    std::vector<std::string> tok;
    std::stringstream ss(name);
    std::string t;
    while (std::getline(ss, t, '.')) tok.push_back(t);
    if (tok.size() < 2) continue;
    if (tok[0] == "global") {
      global_c = true;
    } else if (tok[0] == "head") {
      if (tok[1] == "x2") scales.insert(2);
      if (tok[1] == "x3") scales.insert(3);
      if (tok[1] == "x4") scales.insert(4);
    } else if (tok[0].size() > 1 && tok[0][0] == 'b' &&
               std::isdigit(static_cast<unsigned char>(tok[0][1]))) {
      max_b = std::max(max_b, std::stoi(tok[0].substr(1)));
      if (tok[1].size() > 1 && tok[1][0] == 'u' &&
          std::isdigit(static_cast<unsigned char>(tok[1][1]))) {
        max_u = std::max(max_u, std::stoi(tok[1].substr(1)));
        if (tok.size() > 2 && tok[2] == "pw") pw = true;
      } else if (tok[1].rfind("fuse", 0) == 0) {
        local = true;
      }
    }
  }
  // Recursive nets keep canonical unit entries under shared.*; recover U
  // from them as well in case the alias table is the only block witness.
  for (const auto& e : raw.entries)
    if (e.name.rfind("shared.u", 0) == 0) {
      max_u = std::max(max_u, std::stoi(e.name.substr(8)));
      if (e.name.find(".pw.") != std::string::npos) pw = true;
    }

  if (max_b < 0 || max_u < 0 || scales.empty())
    throw DataError("checkpoint: could not recover the network layout from entry names");
  s.blocks = max_b + 1;
  s.units = max_u + 1;
  s.eblock = pw;
  s.local_cascading = local;
  s.global_cascading = global_c;
  s.recursive = false;
  for (const auto& [alias, canon] : raw.aliases)
    if (canon.rfind("shared.", 0) == 0) s.recursive = true;
  s.scales.assign(scales.begin(), scales.end());

  const std::string unit0 = (s.recursive ? std::string("shared.") : std::string("b0.")) +
                            "u0.conv0.w";
  for (const auto& e : raw.entries)
    if (e.name == unit0) {
      if (e.dims.size() != 4 || e.dims[1] == 0 ||
          static_cast<std::uint32_t>(s.channels) % e.dims[1] != 0)
        throw DataError("checkpoint: malformed unit conv shape for '" + unit0 + "'");
      s.group_size = s.channels / static_cast<int>(e.dims[1]);
    }

  try {
    validate(s);
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint: recovered layout is invalid: ") + e.what());
  }
  return s;
}

namespace {

// Builds the network described by a checkpoint file and loads its weights.
Network<float> network_from_checkpoint(const std::string& path) {
  const RawCheckpoint raw = parse_checkpoint_bytes(detail::read_file_bytes(path, "checkpoint"));
  auto net = build_network<float>(infer_spec(raw), 0);
  load_checkpoint(net.store, path);
  return net;
}

}  // namespace

void cmd_analyze(const RunConfig& cfg, const std::string& out_csv, std::ostream& out) {
  const NetworkSpec spec = to_network_spec(cfg);
  std::vector<int> scales = spec.scales;
  if (cfg.scale != 0) {
    if (std::find(spec.scales.begin(), spec.scales.end(), cfg.scale) == spec.scales.end())
      throw UsageError("analyze: scale " + std::to_string(cfg.scale) +
                       " is not configured for this variant");
    scales = {cfg.scale};
  }
  for (int sc : scales) {
    const CostReport rep = count(spec, cfg.hr_width, cfg.hr_height, sc);
    out << "variant " << spec.variant << ", HR " << cfg.hr_width << "x" << cfg.hr_height << "\n";
    out << report_table(rep) << "\n";
    if (!out_csv.empty()) {
      const std::string path =
          scales.size() == 1 ? out_csv : suffixed_path(out_csv, "x" + std::to_string(sc));
      detail::write_file_bytes(path, report_csv(rep), "cost report");
      out << "wrote " << path << "\n\n";
    }
  }
}

void cmd_sweep(const RunConfig& cfg, const std::vector<int>& groups,
               const std::string& recursive_mode, bool with_train, const std::string& out_csv,
               std::ostream& out) {
  std::vector<bool> rec;
  if (recursive_mode == "both")
    rec = {false, true};
  else if (recursive_mode == "true")
    rec = {true};
  else if (recursive_mode == "false")
    rec = {false};
  else
    throw UsageError("sweep: --recursive must be one of both/true/false");
  if (groups.empty()) throw UsageError("sweep: at least one group size required");

  const int scale = cfg.scale != 0 ? cfg.scale : 4;
  const int channels = cfg.is_set("channels") ? cfg.channels : 64;
  for (int g : groups)
    if (g < 1 || channels % g != 0)
      throw UsageError("sweep: group size " + std::to_string(g) + " must divide channels " +
                       std::to_string(channels));

  std::vector<SrImage> images;
  TrainSet<float> data;
  TrainConfig tcfg;
  if (with_train) {
    if (cfg.dataset.empty()) throw UsageError("sweep: --train requires a dataset directory");
    images = load_hr_dir(cfg.dataset);
    RunConfig c = cfg;
    c.scales = {scale};
    c.set_keys.insert("scales");
    tcfg = to_train_config(c);
    data = make_train_set<float>(images, {scale});
  }

  std::string csv = "group_size,recursive,params,mult_adds";
  if (with_train) csv += ",psnr_db";
  csv += "\n";
  for (bool r : rec)
    for (int g : groups) {
      NetworkSpec spec = make_network_spec("custom");
      spec.blocks = cfg.is_set("blocks") ? cfg.blocks : 3;
      spec.units = cfg.is_set("units") ? cfg.units : 3;
      spec.channels = channels;
      spec.eblock = true;
      spec.group_size = g;
      spec.recursive = r;
      spec.local_cascading = cfg.is_set("local_cascading") ? cfg.local_cascading : true;
      spec.global_cascading = cfg.is_set("global_cascading") ? cfg.global_cascading : true;
      spec.scales = {scale};
      const CostReport rep = count(spec, cfg.hr_width, cfg.hr_height, scale);
      csv += std::to_string(g) + "," + (r ? "true" : "false") + "," +
             std::to_string(rep.total_params) + "," + detail::format_mult_adds(rep.total_mult_adds);
      if (with_train) {
        auto session = TrainSession<float>::start(build_network<float>(spec, tcfg.seed), tcfg);
        train<float>(session, data, tcfg, nullptr);
        const EvalReport er = evaluate_network(session.net, images, scale);
        csv += "," + fmt(er.mean_psnr);
      }
      csv += "\n";
    }

  out << csv;
  if (!out_csv.empty()) {
    detail::write_file_bytes(out_csv, csv, "sweep report");
    out << "wrote " << out_csv << "\n";
  }
}

void cmd_train(const RunConfig& cfg, bool resume, std::ostream& out) {
  if (cfg.dataset.empty())
    throw UsageError("train: a dataset directory is required (dataset=DIR)");
  RunConfig c = cfg;
  if (cfg.scale != 0) {
    c.scales = {cfg.scale};
    c.set_keys.insert("scales");
  }
  const NetworkSpec spec = to_network_spec(c);
  const TrainConfig tcfg = to_train_config(c);

  const std::vector<SrImage> images = load_hr_dir(cfg.dataset);
  auto session = TrainSession<float>::start(build_network<float>(spec, tcfg.seed), tcfg);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const std::string ckpt_path = cfg.out_dir + "/model.crnk";
  const std::string state_path = cfg.out_dir + "/train_state.crns";
  const std::string log_path = cfg.out_dir + "/train_log.csv";

  std::string log;
  if (resume) {
    load_checkpoint(session.net.store, ckpt_path);
    load_train_state(session, state_path);
    if (fs::exists(log_path)) log = detail::read_file_bytes(log_path, "train log");
    out << "resuming from step " << session.next_step << "\n";
  }

  const auto data = make_train_set<float>(images, tcfg.scales);
  const auto sink = [&](const TrainSession<float>& s, std::int64_t step, bool final) {
    save_checkpoint(s.net.store, ckpt_path);
    save_train_state(s, state_path);
    detail::write_file_bytes(log_path, log, "train log");
    out << (final ? "final checkpoint" : "checkpoint") << " at step " << step << ": " << ckpt_path
        << "\n";
  };
  train<float>(session, data, tcfg, &log, sink);
  out << "done: " << (session.next_step - 1) << " steps, model " << ckpt_path << ", log "
      << log_path << "\n";
}

void cmd_upscale(const std::string& ckpt, const std::string& in_png, int scale,
                 const std::string& out_png, std::ostream& out) {
  const Network<float> net = network_from_checkpoint(ckpt);
  if (!net.supports_scale(scale)) {
    std::string have;
    for (int s : net.spec.scales) have += (have.empty() ? "" : ",") + std::to_string(s);
    throw UsageError("upscale: checkpoint supports scales {" + have + "}, not " +
                     std::to_string(scale));
  }
  const ImageU8 lr = load_png(in_png);
  const ImageU8 sr = upscale_image(net, lr, scale);
  std::string dest = out_png;
  if (dest.empty()) {
    dest = in_png;
    const std::string ext = ".png";
    if (dest.size() > ext.size() && dest.compare(dest.size() - ext.size(), ext.size(), ext) == 0)
      dest = dest.substr(0, dest.size() - ext.size());
    dest += "_x" + std::to_string(scale) + ".png";
  }
  save_png(sr, dest);
  out << in_png << " (" << lr.width << "x" << lr.height << ") -> " << dest << " (" << sr.width
      << "x" << sr.height << ")\n";
}

void cmd_eval(const RunConfig& cfg, const std::string& ckpt, const std::string& out_csv,
              std::ostream& out) {
  if (cfg.dataset.empty()) throw UsageError("eval: a dataset directory is required (dataset=DIR)");
  if (cfg.scale == 0) throw UsageError("eval: a scale is required (scale=2|3|4)");
  const std::vector<SrImage> images = load_hr_dir(cfg.dataset);

  const EvalReport bic = evaluate_bicubic(images, cfg.scale);
  out << "bicubic  x" << cfg.scale << ": PSNR " << fmt(bic.mean_psnr) << " dB, SSIM "
      << fmt(bic.mean_ssim) << " over " << bic.rows.size() << " images\n";

  if (!ckpt.empty()) {
    const Network<float> net = network_from_checkpoint(ckpt);
    if (!net.supports_scale(cfg.scale))
      throw UsageError("eval: checkpoint does not support scale " + std::to_string(cfg.scale));
    const EvalReport rep = evaluate_network(net, images, cfg.scale);
    out << "model    x" << cfg.scale << ": PSNR " << fmt(rep.mean_psnr) << " dB, SSIM "
        << fmt(rep.mean_ssim) << " over " << rep.rows.size() << " images\n";
    if (!out_csv.empty()) {
      detail::write_file_bytes(out_csv, eval_csv(rep), "eval report");
      const std::string bic_path = suffixed_path(out_csv, "bicubic");
      detail::write_file_bytes(bic_path, eval_csv(bic), "eval report");
      out << "wrote " << out_csv << " and " << bic_path << "\n";
    } else {
      out << eval_csv(rep);
    }
  } else if (!out_csv.empty()) {
    detail::write_file_bytes(out_csv, eval_csv(bic), "eval report");
    out << "wrote " << out_csv << "\n";
  } else {
    out << eval_csv(bic);
  }
}

namespace {

int run_cli_impl(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"srkit: cascading residual network super-resolution toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string variant, hr, out_path, ckpt, in_png, groups_csv = "1,2,4,8,16,32,64";
  std::string recursive_mode = "both", dataset, out_dir, config_positional;
  int scale = 0;
  long long seed = -1;
  bool resume = false, with_train = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("overrides", overrides, "key=value overrides (win over the file)");
  };

  CLI::App* analyze = app.add_subcommand("analyze", "parameter and Mult-Adds report");
  analyze->add_option("--variant", variant, "baseline|carn-nl|carn-ng|carn|carn-m|custom");
  analyze->add_option("--scale", scale, "report a single scale (default: all)");
  analyze->add_option("--hr", hr, "HR size WxH (default 1280x720)");
  analyze->add_option("--out", out_path, "write CSV report(s) here");
  add_common(analyze);

  CLI::App* sweep = app.add_subcommand("sweep", "group-size / recursion efficiency sweep");
  sweep->add_option("--groups", groups_csv, "comma-separated group sizes");
  sweep->add_option("--recursive", recursive_mode, "both|true|false");
  sweep->add_flag("--train", with_train, "also train each point and report PSNR");
  sweep->add_option("--scale", scale, "upsampling scale (default 4)");
  sweep->add_option("--hr", hr, "HR size WxH (default 1280x720)");
  sweep->add_option("--dataset", dataset, "HR PNG directory (required with --train)");
  sweep->add_option("--out", out_path, "write the sweep CSV here");
  add_common(sweep);

  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("config-file", config_positional, "key=value config file");
  train_cmd->add_option("--config", config_path, "key=value config file");
  train_cmd->add_option("--dataset", dataset, "HR PNG directory");
  train_cmd->add_option("--out-dir", out_dir, "output directory for model + logs");
  train_cmd->add_option("--scale", scale, "train a single scale");
  train_cmd->add_option("--seed", seed, "RNG seed");
  train_cmd->add_flag("--resume", resume, "continue from out-dir checkpoints");
  train_cmd->add_option("over", overrides, "key=value overrides");

  CLI::App* upscale = app.add_subcommand("upscale", "super-resolve one PNG");
  upscale->add_option("--ckpt", ckpt, "model checkpoint (.crnk)")->required();
  upscale->add_option("--in", in_png, "input PNG")->required();
  upscale->add_option("--scale", scale, "upsampling scale")->required();
  upscale->add_option("--out", out_path, "output PNG (default <in>_xS.png)");

  CLI::App* eval = app.add_subcommand("eval", "PSNR/SSIM report over a directory");
  eval->add_option("--dataset", dataset, "HR PNG directory");
  eval->add_option("--scale", scale, "evaluation scale");
  eval->add_option("--ckpt", ckpt, "model checkpoint (bicubic-only without it)");
  eval->add_option("--out", out_path, "write the eval CSV here");
  add_common(eval);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  }

  try {
    // A train positional that looks like key=value is an override, not a file.
    if (config_positional.find('=') != std::string::npos) {
      overrides.insert(overrides.begin(), config_positional);
      config_positional.clear();
    }
    if (config_path.empty()) config_path = config_positional;

    RunConfig cfg;
    if (!config_path.empty()) load_config_file(cfg, config_path);
    if (!variant.empty()) apply_key_value(cfg, "variant", variant, "flag");
    if (!hr.empty()) {
      const auto x = hr.find('x');
      if (x == std::string::npos) throw UsageError("--hr expects WxH, e.g. 1280x720");
      apply_key_value(cfg, "hr_width", hr.substr(0, x), "flag");
      apply_key_value(cfg, "hr_height", hr.substr(x + 1), "flag");
    }
    if (!dataset.empty()) apply_key_value(cfg, "dataset", dataset, "flag");
    if (!out_dir.empty()) apply_key_value(cfg, "out_dir", out_dir, "flag");
    if (scale != 0) apply_key_value(cfg, "scale", std::to_string(scale), "flag");
    if (seed >= 0) apply_key_value(cfg, "seed", std::to_string(seed), "flag");
    apply_overrides(cfg, overrides);

    if (analyze->parsed()) {
      cmd_analyze(cfg, out_path, out);
    } else if (sweep->parsed()) {
      cmd_sweep(cfg, parse_int_list("groups", groups_csv, "flag"), recursive_mode, with_train,
                out_path, out);
    } else if (train_cmd->parsed()) {
      cmd_train(cfg, resume, out);
    } else if (upscale->parsed()) {
      cmd_upscale(ckpt, in_png, cfg.scale, out_path, out);
    } else if (eval->parsed()) {
      cmd_eval(cfg, ckpt, out_path, out);
    }
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 70;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return run_cli_impl(args, out, err);
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 70;
  }
}

}  // namespace srkit
