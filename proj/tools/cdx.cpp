// cdx: train, evaluate and inspect the bi-temporal change detector.
//
//   cdx train     --config run.cfg [--set train.epochs=5 ...]
//   cdx eval      --config run.cfg [--checkpoint path] [--oracle]
//   cdx predict   --config run.cfg --a a.png --b b.png [--label l.png] --out dir
//   cdx gradcheck [--config run.cfg] [--size 32] [--coords 2] [--seeds 5]
//   cdx params    [--config run.cfg] [--by-module]
//   cdx synth     --config run.cfg --out dir
//
// Failures print one line "error: <code>: <message>" on stderr.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdx/config.hpp"
#include "cdx/gradsuite.hpp"
#include "cdx/ops.hpp"
#include "cdx/trainer.hpp"

namespace fs = std::filesystem;
using namespace cdx;

namespace {

struct CliError : std::runtime_error {
    CliError(std::string c, const std::string& msg) : std::runtime_error(msg), code(std::move(c)) {}
    std::string code;
};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fixed(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t file_fnv(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char c;
    while (is.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os << text;
    if (!os) throw CliError("io", "cannot write " + p.string());
}

std::string metric_table(const Metrics& m, const ConfusionCounts& c, double loss) {
    std::ostringstream os;
    os << "metric     value\n"
       << "f1         " << fixed(m.f1) << "\n"
       << "precision  " << fixed(m.precision) << "\n"
       << "recall     " << fixed(m.recall) << "\n"
       << "iou        " << fixed(m.iou) << "\n"
       << "oa         " << fixed(m.oa) << "\n"
       << "loss       " << fixed(loss) << "\n"
       << "tp " << c.tp << "  fp " << c.fp << "  fn " << c.fn << "  tn " << c.tn << "\n";
    return os.str();
}

nlohmann::json metrics_json(const Metrics& m, const ConfusionCounts& c, double loss) {
    return {{"f1", m.f1},   {"precision", m.precision}, {"recall", m.recall}, {"iou", m.iou},
            {"oa", m.oa},   {"loss", loss},             {"tp", c.tp},         {"fp", c.fp},
            {"fn", c.fn},   {"tn", c.tn}};
}

RunConfig resolve(const std::string& config_path, const std::vector<std::string>& sets) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& s : sets) apply_override(cfg, s);
    validate(cfg);
    return cfg;
}

struct Built {
    ParamStore store;
    std::unique_ptr<ChangeDetector> model;
};

std::unique_ptr<Built> build(const RunConfig& cfg) {
    auto b = std::make_unique<Built>();
    Rng rng(cfg.init_seed);
    b->model = std::make_unique<ChangeDetector>(cfg.model, b->store, rng);
    return b;
}

int cmd_train(const RunConfig& cfg) {
    const auto samples = load_dataset(cfg.data);
    auto b = build(cfg);
    fs::create_directories(cfg.out);
    write_file(cfg.out / "config.txt", to_text(cfg));

    std::ofstream log(cfg.out / "train_log.tsv", std::ios::trunc);
    if (!log) throw CliError("io", "cannot write " + (cfg.out / "train_log.tsv").string());
    log << "epoch\tloss\tf1\tprecision\trecall\tiou\toa\ttp\tfp\tfn\ttn\n";
    const auto t0 = std::chrono::steady_clock::now();
    train(*b->model, b->store, samples, cfg.train, [&](const EpochLog& r) {
        const auto& m = r.metrics;
        log << r.epoch << '\t' << num(r.loss) << '\t' << num(m.f1) << '\t' << num(m.precision) << '\t'
            << num(m.recall) << '\t' << num(m.iou) << '\t' << num(m.oa) << '\t' << r.counts.tp << '\t'
            << r.counts.fp << '\t' << r.counts.fn << '\t' << r.counts.tn << '\n';
        log.flush();
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("epoch %zu  loss %.5f  f1 %.4f  [%.1fs]\n", r.epoch, r.loss, m.f1, s);
        std::fflush(stdout);
    });
    if (!log) throw CliError("io", "failed writing the training log");

    const auto ckpt = cfg.out / "checkpoint.bin";
    save_checkpoint(b->store, ckpt);
    const auto ev = evaluate(*b->model, samples, cfg.train.loss);
    const auto table = metric_table(ev.metrics, ev.counts, ev.loss);
    write_file(cfg.out / "metrics.txt", table);

    nlohmann::json man;
    man["config"] = to_text(cfg);
    man["config_hash"] = hex64(config_hash(cfg));
    man["seeds"] = {{"init", cfg.init_seed}, {"train", cfg.train.seed}, {"data", cfg.data.synth.seed}};
    man["samples"] = samples.size();
    man["epochs"] = cfg.train.epochs;
    man["params"] = b->store.scalar_count();
    man["checkpoint"] = {{"file", "checkpoint.bin"}, {"fnv1a64", hex64(file_fnv(ckpt))}};
    man["metrics"] = metrics_json(ev.metrics, ev.counts, ev.loss);
    write_file(cfg.out / "manifest.json", man.dump(2) + "\n");

    std::cout << table;
    return 0;
}

int cmd_eval(const RunConfig& cfg, fs::path ckpt, bool oracle) {
    const auto samples = load_dataset(cfg.data);
    if (oracle) {
        // Prediction seam: every mask is scored against itself.
        ConfusionCounts c;
        for (const auto& s : samples) c = update_confusion(mask_of(s.mask), mask_of(s.mask), c);
        std::cout << metric_table(metrics(c), c, 0.0);
        return 0;
    }
    if (ckpt.empty()) ckpt = cfg.out / "checkpoint.bin";
    auto b = build(cfg);
    load_checkpoint(b->store, ckpt);
    const auto ev = evaluate(*b->model, samples, cfg.train.loss);
    std::cout << metric_table(ev.metrics, ev.counts, ev.loss);
    return 0;
}

int cmd_predict(const RunConfig& cfg, fs::path ckpt, const fs::path& a, const fs::path& bpath, const fs::path& label,
                const fs::path& out) {
    if (ckpt.empty()) ckpt = cfg.out / "checkpoint.bin";
    auto b = build(cfg);
    load_checkpoint(b->store, ckpt);
    const Tensor img1 = load_rgb(a), img2 = load_rgb(bpath);
    if (img1.shape() != img2.shape())
        throw ShapeError("image sizes differ: " + shape_str(img1.shape()) + " vs " + shape_str(img2.shape()));
    Tensor z;
    {
        NoGradGuard ng;
        z = b->model->forward(img1, img2);
    }
    fs::create_directories(out);
    save_gray(sigmoid(z), out / "prob.png");
    const auto pred = binarize_logits(z);
    std::vector<double> pv(pred.begin(), pred.end());
    save_gray(Tensor::from(z.shape(), pv), out / "mask.png");
    std::cout << "wrote " << (out / "prob.png").string() << "\n" << "wrote " << (out / "mask.png").string() << "\n";
    if (!label.empty()) {
        const Tensor y = load_mask(label);
        if (y.shape() != z.shape())
            throw ShapeError("label shape " + shape_str(y.shape()) + " does not match " + shape_str(z.shape()));
        const auto gt = mask_of(y);
        save_comparison(pred, gt, z.dim(2), z.dim(3), out / "comparison.png");
        std::cout << "wrote " << (out / "comparison.png").string() << "\n";
        const auto c = update_confusion(pred, gt);
        std::cout << metric_table(metrics(c), c, total_loss(z, y, cfg.train.loss).item());
    }
    return 0;
}

int cmd_gradcheck(const RunConfig& cfg, const GradSuiteOptions& base) {
    GradSuiteOptions o = base;
    o.model = cfg.model;
    std::printf("%-22s %-12s %8s %8s\n", "check", "max_rel_err", "coords", "seconds");
    const auto rows = run_grad_suite(o, [](const GradSuiteEntry& e) {
        std::printf("%-22s %-12.3e %8zu %8.2f\n", e.name.c_str(), e.max_rel_error, e.coords, e.seconds);
        std::fflush(stdout);
    });
    const double worst = worst_error(rows);
    std::printf("max_rel_error %.3e\n", worst);
    if (!(worst < 1e-4)) {
        for (const auto& e : rows)
            if (e.max_rel_error == worst) throw CliError("gradcheck", e.name + " exceeds 1e-4: " + e.worst);
    }
    return 0;
}

int cmd_params(const RunConfig& cfg, bool by_module) {
    auto b = build(cfg);
    if (by_module) {
        std::map<std::string, std::size_t> groups;
        std::vector<std::string> order;
        for (const auto& p : b->store.params()) {
            const auto key = p.name.substr(0, p.name.find('.'));
            if (!groups.count(key)) order.push_back(key);
            groups[key] += p.value.numel();
        }
        for (const auto& k : order) std::printf("%-12s %zu\n", k.c_str(), groups[k]);
    }
    std::printf("params %zu\n", b->store.scalar_count());
    return 0;
}

int cmd_synth(const RunConfig& cfg, const fs::path& out) {
    auto c = cfg.data;
    c.source = DataConfig::Source::Synth;
    const auto samples = load_dataset(c);
    save_pair_dir(samples, out);
    std::cout << "wrote " << samples.size() << " pairs to " << out.string() << "\n";
    return 0;
}

int fail(const std::string& code, const std::string& msg) {
    std::string one = msg;
    for (auto& ch : one)
        if (ch == '\n') ch = ' ';
    std::cerr << "error: " << code << ": " << one << "\n";
    return code == "usage" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bi-temporal change detection with xLSTM enhancers"};
    app.require_subcommand(1);
    std::string config_path;
    std::vector<std::string> sets;
    app.add_option("-c,--config", config_path, "run configuration file");
    app.add_option("-s,--set", sets, "override, section.key=value (repeatable)");

    auto* train_cmd = app.add_subcommand("train", "train and write checkpoint, log, metrics and manifest");
    std::string out_dir;
    train_cmd->add_option("-o,--out", out_dir, "output directory (overrides output.dir)");

    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the configured data");
    std::string ckpt;
    bool oracle = false;
    eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file (default <output.dir>/checkpoint.bin)");
    eval_cmd->add_flag("--oracle", oracle, "score the ground truth against itself");

    auto* pred_cmd = app.add_subcommand("predict", "write probability, mask and comparison images");
    std::string pa, pb, plabel, pout;
    pred_cmd->add_option("--checkpoint", ckpt, "checkpoint file (default <output.dir>/checkpoint.bin)");
    pred_cmd->add_option("--a", pa, "image at time 1")->required()->check(CLI::ExistingFile);
    pred_cmd->add_option("--b", pb, "image at time 2")->required()->check(CLI::ExistingFile);
    pred_cmd->add_option("--label", plabel, "ground-truth mask")->check(CLI::ExistingFile);
    pred_cmd->add_option("-o,--out", pout, "output directory")->required();

    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    GradSuiteOptions gopts;
    gc_cmd->add_option("--size", gopts.model_size, "end-to-end input side")->capture_default_str();
    gc_cmd->add_option("--coords", gopts.model_coords, "coordinates per model tensor")->capture_default_str();
    gc_cmd->add_option("--seeds", gopts.seeds, "random cases per op")->capture_default_str();
    gc_cmd->add_option("--model-seed", gopts.model_seed, "seed of the end-to-end case")->capture_default_str();

    auto* params_cmd = app.add_subcommand("params", "trainable scalar count");
    bool by_module = false;
    params_cmd->add_flag("--by-module", by_module, "break the count down by top-level module");

    auto* synth_cmd = app.add_subcommand("synth", "write the synthetic dataset as A/B/label PNGs");
    std::string synth_out;
    synth_cmd->add_option("-o,--out", synth_out, "output directory")->required();

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what());
    }

    try {
        RunConfig cfg = resolve(config_path, sets);
        if (*train_cmd) {
            if (!out_dir.empty()) cfg.out = out_dir;
            return cmd_train(cfg);
        }
        if (*eval_cmd) return cmd_eval(cfg, ckpt, oracle);
        if (*pred_cmd) return cmd_predict(cfg, ckpt, pa, pb, plabel, pout);
        if (*gc_cmd) return cmd_gradcheck(cfg, gopts);
        if (*params_cmd) return cmd_params(cfg, by_module);
        if (*synth_cmd) return cmd_synth(cfg, synth_out);
    } catch (const CliError& e) {
        return fail(e.code, e.what());
    } catch (const ConfigError& e) {
        return fail("config", e.what());
    } catch (const CheckpointError& e) {
        return fail("checkpoint", e.what());
    } catch (const DataError& e) {
        return fail("data", e.what());
    } catch (const ShapeError& e) {
        return fail("shape", e.what());
    } catch (const fs::filesystem_error& e) {
        return fail("io", e.what());
    } catch (const std::invalid_argument& e) {
        return fail("invalid", e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return fail("usage", "no command");
}
