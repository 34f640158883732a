#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "noisebalance/checkpoint.hpp"
#include "noisebalance/config.hpp"
#include "noisebalance/parallel.hpp"
#include "noisebalance/report.hpp"
#include "noisebalance/sweep.hpp"
#include "noisebalance/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace noisebalance;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_out = true) {
    cmd->add_option("--config", args.config_path, "JSON config file (defaults apply when omitted)");
    cmd->add_option("--seed", args.seed, "override train.master_seed");
    if (with_out) {
        cmd->add_option("--out", args.out, "output directory")->required();
        cmd->add_flag("--force", args.force, "allow writing into a non-empty output directory");
    }
}

RunConfig load_run_config(const CommonArgs& args) {
    RunConfig cfg = args.config_path.empty() ? RunConfig{} : load_config_file(args.config_path);
    if (args.seed) cfg.train.master_seed = *args.seed;
    return cfg;
}

void prepare_out_dir(const std::string& out, bool force) {
    const fs::path dir(out);
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw ConfigError(out + " exists and is not a directory");
        if (!fs::is_empty(dir) && !force) {
            throw ConfigError("output directory " + out + " is not empty (use --force to overwrite)");
        }
    } else {
        fs::create_directories(dir);
    }
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
    write_text_file(out_dir + "/resolved_config.json", resolved_json(cfg).dump(2) + "\n");
}

struct LoadedData {
    Dataset train;
    Dataset test;
};

LoadedData load_data_dir(const std::string& dir) {
    const auto train_path = dir + "/train.bin";
    const auto test_path = dir + "/test.bin";
    if (!fs::exists(train_path)) throw ConfigError("missing dataset file " + train_path);
    if (!fs::exists(test_path)) throw ConfigError("missing dataset file " + test_path);
    return LoadedData{load_dataset(train_path), load_dataset(test_path)};
}

json dataset_manifest(const RunConfig& cfg, const Dataset& d, std::uint64_t seed) {
    json m;
    m["name"] = d.name();
    m["seed"] = seed;
    m["class_counts"] = d.class_counts();
    m["spec"] = resolved_json(cfg)["data"];
    return m;
}

std::string variant_label(const TrainConfig& cfg) {
    if (cfg.resolved_defer() >= cfg.epochs) return "erm";
    if (cfg.open.delta == 0.0 && cfg.open.mode == OpenMode::longtail) return "deferred_oversampling";
    return "open";
}

ModelConfig resolve_model(const RunConfig& cfg, const Dataset& trainset) {
    ModelConfig m = cfg.model;
    if (m.input_dim == 0) m.input_dim = trainset.pixels_per_image();
    if (m.num_classes == 0) m.num_classes = trainset.num_classes();
    m.validate();
    return m;
}

int cmd_gen_data(const CommonArgs& args) {
    const auto cfg = load_run_config(args);
    prepare_out_dir(args.out, args.force);
    const auto sizes = longtail_sizes(cfg.longtail);
    auto data = synth_generate(cfg.synth, sizes, cfg.train.master_seed);
    save_dataset(data.train, args.out + "/train.bin");
    save_dataset(data.test, args.out + "/test.bin");
    write_text_file(args.out + "/train.bin.manifest.json",
                    dataset_manifest(cfg, data.train, cfg.train.master_seed).dump(2) + "\n");
    write_text_file(args.out + "/test.bin.manifest.json",
                    dataset_manifest(cfg, data.test, cfg.train.master_seed).dump(2) + "\n");
    echo_config(cfg, args.out);
    std::cout << "wrote " << args.out << "/train.bin (" << data.train.size() << " images), "
              << args.out << "/test.bin (" << data.test.size() << " images)\n";
    return 0;
}

int cmd_stats(const std::string& data_path) {
    const auto d = load_dataset(data_path);
    const auto stats = channel_stats(d);
    json j;
    j["mean"] = stats.mean;
    j["std"] = stats.std;
    j["num_images"] = d.size();
    j["class_counts"] = d.class_counts();
    std::cout << j.dump(2) << "\n";
    return 0;
}

template <typename S>
json run_train_to_json(const RunConfig& cfg, const LoadedData& data, const std::string& out_dir) {
    const auto model_cfg = resolve_model(cfg, data.train);
    const auto t0 = std::chrono::steady_clock::now();
    auto run = train<S>(model_cfg, cfg.train, data.train, data.test);
    const auto wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    write_text_file(out_dir + "/metrics.csv", metrics_csv(run.metrics));
    save_checkpoint(run.model, out_dir + "/checkpoint.bin");

    json fin = metrics_json(run.metrics);
    fin["config"] = resolved_json(cfg);
    fin["config"]["model"] = json{{"input_dim", model_cfg.input_dim},
                                  {"hidden_dims", model_cfg.hidden_dims},
                                  {"num_classes", model_cfg.num_classes},
                                  {"norm_variant", norm_variant_name(model_cfg.norm_variant)},
                                  {"init_scale", model_cfg.init_scale}};
    fin["seed"] = cfg.train.master_seed;
    fin["variant"] = variant_label(cfg.train);
    fin["wall_time_seconds"] = wall;
    return fin;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir) {
    const auto cfg = load_run_config(args);
    const auto data = load_data_dir(data_dir);
    prepare_out_dir(args.out, args.force);
    echo_config(cfg, args.out);
    json fin = cfg.train.precision == Precision::dbl
                   ? run_train_to_json<double>(cfg, data, args.out)
                   : run_train_to_json<float>(cfg, data, args.out);
    write_text_file(args.out + "/final.json", fin.dump(2) + "\n");
    std::cout << "overall_accuracy " << format_double(fin["overall_accuracy"].get<double>())
              << "\n";
    return 0;
}

template <typename S>
int run_eval(const RunConfig& cfg, const LoadedData& data, const std::string& checkpoint,
             const std::string& out_dir) {
    const auto model_cfg = resolve_model(cfg, data.train);
    RngStream init_rng(cfg.train.master_seed, "init");
    Mlp<S> model(model_cfg, init_rng);
    load_checkpoint(model, checkpoint);
    const auto metrics = evaluate(model, data.test, data.train.class_counts());
    json j = metrics_json(metrics);
    j["checkpoint"] = checkpoint;
    if (!out_dir.empty()) {
        write_text_file(out_dir + "/eval.json", j.dump(2) + "\n");
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& data_dir, const std::string& checkpoint) {
    const auto cfg = load_run_config(args);
    const auto data = load_data_dir(data_dir);
    std::string out_dir;
    if (!args.out.empty()) {
        prepare_out_dir(args.out, args.force);
        out_dir = args.out;
    }
    return cfg.train.precision == Precision::dbl
               ? run_eval<double>(cfg, data, checkpoint, out_dir)
               : run_eval<float>(cfg, data, checkpoint, out_dir);
}

template <typename S>
int run_ablate(const RunConfig& cfg, const LoadedData& data, const std::string& out_dir) {
    const auto model_base = resolve_model(cfg, data.train);
    struct Run {
        NormVariant variant;
        std::uint64_t seed;
        double overall = 0.0;
        double group1 = 0.0;
    };
    std::vector<Run> runs;
    for (auto variant : cfg.ablate.variants) {
        for (int s = 0; s < cfg.ablate.seeds; ++s) {
            runs.push_back({variant, cfg.train.master_seed + static_cast<std::uint64_t>(s)});
        }
    }
    parallel_for(static_cast<int>(runs.size()), configured_threads(), [&](int i) {
        auto& r = runs[static_cast<std::size_t>(i)];
        ModelConfig mc = model_base;
        mc.norm_variant = r.variant;
        TrainConfig tc = cfg.train;
        tc.master_seed = r.seed;
        auto res = train<S>(mc, tc, data.train, data.test);
        r.overall = res.metrics.overall_accuracy;
        r.group1 = res.metrics.group_accuracy[0];
    });

    std::string detail = "variant,seed,overall_acc,group1_acc\n";
    for (const auto& r : runs) {
        detail += std::string(norm_variant_name(r.variant)) + "," + std::to_string(r.seed) + "," +
                  format_double(r.overall) + "," + format_double(r.group1) + "\n";
    }
    write_text_file(out_dir + "/ablation_runs.csv", detail);

    std::string summary = "variant,mean_acc,stderr_acc,mean_group1_acc,stderr_group1_acc,seeds\n";
    for (auto variant : cfg.ablate.variants) {
        std::vector<double> acc, g1;
        for (const auto& r : runs) {
            if (r.variant != variant) continue;
            acc.push_back(r.overall);
            g1.push_back(r.group1);
        }
        auto mean_se = [](const std::vector<double>& v) {
            double m = 0.0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - m) * (x - m);
            const double se = v.size() > 1
                                  ? std::sqrt(var / static_cast<double>(v.size() - 1)) /
                                        std::sqrt(static_cast<double>(v.size()))
                                  : 0.0;
            return std::pair<double, double>{m, se};
        };
        const auto [am, ase] = mean_se(acc);
        const auto [gm, gse] = mean_se(g1);
        summary += std::string(norm_variant_name(variant)) + "," + format_double(am) + "," +
                   format_double(ase) + "," + format_double(gm) + "," + format_double(gse) + "," +
                   std::to_string(acc.size()) + "\n";
    }
    write_text_file(out_dir + "/ablation.csv", summary);
    std::cout << summary;
    return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& data_dir) {
    const auto cfg = load_run_config(args);
    const auto data = load_data_dir(data_dir);
    prepare_out_dir(args.out, args.force);
    echo_config(cfg, args.out);
    return cfg.train.precision == Precision::dbl ? run_ablate<double>(cfg, data, args.out)
                                                 : run_ablate<float>(cfg, data, args.out);
}

template <typename S>
int run_sweep(const RunConfig& cfg, const LoadedData& data, const std::vector<double>& sigmas,
              const std::string& out_dir) {
    const auto model_cfg = resolve_model(cfg, data.train);
    std::vector<std::uint64_t> seeds;
    for (int s = 0; s < cfg.sweep.seeds; ++s) {
        seeds.push_back(cfg.train.master_seed + static_cast<std::uint64_t>(s));
    }
    const auto rows = additive_noise_sweep<S>(model_cfg, cfg.train, data.train, data.test, sigmas,
                                              seeds, configured_threads());
    std::string csv = "sigma,overall_acc,minority_group_acc,seed_count\n";
    for (const auto& r : rows) {
        csv += (r.pure ? std::string("pure") : format_double(r.sigma)) + "," +
               format_double(r.overall_acc) + "," + format_double(r.minority_group_acc) + "," +
               std::to_string(r.seed_count) + "\n";
    }
    write_text_file(out_dir + "/sweep.csv", csv);
    std::cout << csv;
    return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& data_dir,
              const std::vector<double>& sigmas_flag) {
    const auto cfg = load_run_config(args);
    const auto data = load_data_dir(data_dir);
    prepare_out_dir(args.out, args.force);
    echo_config(cfg, args.out);
    const auto& sigmas = sigmas_flag.empty() ? cfg.sweep.sigmas : sigmas_flag;
    return cfg.train.precision == Precision::dbl ? run_sweep<double>(cfg, data, sigmas, args.out)
                                                 : run_sweep<float>(cfg, data, sigmas, args.out);
}

template <typename S>
int run_probe(const RunConfig& cfg, const Dataset& trainset, const std::string& checkpoint,
              int num_batches, const std::string& out_dir) {
    ModelConfig model_cfg = cfg.model;
    if (model_cfg.input_dim == 0) model_cfg.input_dim = trainset.pixels_per_image();
    if (model_cfg.num_classes == 0) model_cfg.num_classes = trainset.num_classes();
    model_cfg.validate();
    RngStream init_rng(cfg.train.master_seed, "init");
    Mlp<S> model(model_cfg, init_rng);
    load_checkpoint(model, checkpoint);
    const auto rep =
        grad_probe(model, trainset, cfg.train.open, num_batches, cfg.train.master_seed);
    json j;
    j["num_batches"] = rep.num_batches;
    json per_class = json::object();
    for (std::size_t c = 0; c < rep.mean_magnitude.size(); ++c) {
        json e;
        e["mean_grad_magnitude"] =
            std::isnan(rep.mean_magnitude[c]) ? json(nullptr) : json(rep.mean_magnitude[c]);
        e["direction_variance"] =
            std::isnan(rep.direction_variance[c]) ? json(nullptr) : json(rep.direction_variance[c]);
        e["batches_seen"] = rep.batches_seen[c];
        per_class[std::to_string(c)] = e;
    }
    j["per_class"] = per_class;
    if (!out_dir.empty()) write_text_file(out_dir + "/probe.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_probe(const CommonArgs& args, const std::string& data_dir, const std::string& checkpoint,
              int num_batches_flag) {
    const auto cfg = load_run_config(args);
    const auto train_path = data_dir + "/train.bin";
    if (!fs::exists(train_path)) throw ConfigError("missing dataset file " + train_path);
    const auto trainset = load_dataset(train_path);
    std::string out_dir;
    if (!args.out.empty()) {
        prepare_out_dir(args.out, args.force);
        out_dir = args.out;
    }
    const int nb = num_batches_flag > 0 ? num_batches_flag : cfg.probe.num_batches;
    return cfg.train.precision == Precision::dbl
               ? run_probe<double>(cfg, trainset, checkpoint, nb, out_dir)
               : run_probe<float>(cfg, trainset, checkpoint, nb, out_dir);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"noisebalance: long-tail image classification with pure-noise oversampling "
                 "(OPeN) and distribution-aware routing batch norm (DAR-BN)"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, ablate_args, sweep_args, probe_args;
    std::string stats_data, train_data, eval_data, eval_ckpt, ablate_data, sweep_data, probe_data,
        probe_ckpt;
    std::vector<double> sweep_sigmas;
    int probe_batches = 0;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic long-tail dataset");
    add_common(gen, gen_args);

    auto* stats = app.add_subcommand("stats", "per-channel pixel statistics of a dataset file");
    stats->add_option("--data", stats_data, "ILSB1 dataset file")->required();

    auto* tr = app.add_subcommand("train", "train one model and export metrics");
    add_common(tr, train_args);
    tr->add_option("--data", train_data, "dataset directory (train.bin/test.bin)")->required();

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(ev, eval_args, false);
    ev->add_option("--out", eval_args.out, "optional output directory");
    ev->add_flag("--force", eval_args.force, "allow writing into a non-empty output directory");
    ev->add_option("--data", eval_data, "dataset directory (train.bin/test.bin)")->required();
    ev->add_option("--checkpoint", eval_ckpt, "ILCK1 checkpoint file")->required();

    auto* ab = app.add_subcommand("ablate-norm", "train every norm variant under identical "
                                                 "noise config and seeds");
    add_common(ab, ablate_args);
    ab->add_option("--data", ablate_data, "dataset directory (train.bin/test.bin)")->required();

    auto* sw = app.add_subcommand("sweep-noise", "additive-noise strength sweep plus a "
                                                 "pure-noise reference");
    add_common(sw, sweep_args);
    sw->add_option("--data", sweep_data, "dataset directory (train.bin/test.bin)")->required();
    sw->add_option("--sigmas", sweep_sigmas, "noise std values (overrides sweep.sigmas)");

    auto* pr = app.add_subcommand("probe", "per-class gradient magnitude and direction variance");
    add_common(pr, probe_args, false);
    pr->add_option("--out", probe_args.out, "optional output directory");
    pr->add_flag("--force", probe_args.force, "allow writing into a non-empty output directory");
    pr->add_option("--data", probe_data, "dataset directory (train.bin)")->required();
    pr->add_option("--checkpoint", probe_ckpt, "ILCK1 checkpoint file")->required();
    pr->add_option("--batches", probe_batches, "probe batch count (overrides probe.num_batches)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_args);
        if (stats->parsed()) return cmd_stats(stats_data);
        if (tr->parsed()) return cmd_train(train_args, train_data);
        if (ev->parsed()) return cmd_eval(eval_args, eval_data, eval_ckpt);
        if (ab->parsed()) return cmd_ablate(ablate_args, ablate_data);
        if (sw->parsed()) return cmd_sweep(sweep_args, sweep_data, sweep_sigmas);
        if (pr->parsed()) return cmd_probe(probe_args, probe_data, probe_ckpt, probe_batches);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
