#include "glyphdiff/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "glyphdiff/eval.hpp"
#include "glyphdiff/image_io.hpp"

namespace fs = std::filesystem;

namespace glyphdiff {

namespace {

const char* kUsage = R"(usage: glyphdiff <subcommand> [flags]

subcommands:
  gen-data   --writers N --words N --seed N --out DIR [--seen-fraction F] [--iv-fraction F]
  train-ae   [--config FILE] [--<key> VALUE ...]
  train      [--config FILE] [--no-saq] [--no-sce] [--no-pce] [--<key> VALUE ...]
  sample     --ref FILE --text WORD --seed N [--ckpt FILE] [--ae FILE] [--steps N]
             [--scale F] [--out FILE]
  evaluate   --data DIR [--ckpt FILE] [--ae FILE] [--out FILE] [--samples N]
             [--steps N] [--scale F] [--seed N]
  dump-attn  --ref FILE --text WORD --t N [--ckpt FILE] [--ae FILE] [--seed N] [--out DIR]

config keys mirror the run config (key=value file via --config, flags override);
boolean toggles: --no-saq/--no-sce/--no-pce disable the auxiliary losses.
)";

struct CliError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// flat --flag value parser; flags may also be --flag=value
std::map<std::string, std::string> parse_flags(int argc, const char* const* argv, int start) {
    std::map<std::string, std::string> out;
    for (int i = start; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg.rfind("--", 0) != 0) throw CliError("unexpected argument: " + arg);
        arg = arg.substr(2);
        const size_t eq = arg.find('=');
        if (eq != std::string::npos) {
            out[arg.substr(0, eq)] = arg.substr(eq + 1);
            continue;
        }
        if (arg == "no-saq" || arg == "no-sce" || arg == "no-pce") {
            out[arg] = "";
            continue;
        }
        if (i + 1 >= argc) throw CliError("flag --" + arg + " expects a value");
        out[arg] = argv[++i];
    }
    return out;
}

std::string take(std::map<std::string, std::string>& flags, const std::string& key,
                 const std::string& fallback = "", bool required = false) {
    auto it = flags.find(key);
    if (it == flags.end()) {
        if (required) throw CliError("missing required flag --" + key);
        return fallback;
    }
    std::string v = it->second;
    flags.erase(it);
    return v;
}

void reject_leftover(const std::map<std::string, std::string>& flags) {
    if (!flags.empty()) throw CliError("unknown flag --" + flags.begin()->first);
}

RunConfig config_from_flags(std::map<std::string, std::string>& flags) {
    RunConfig cfg;
    const std::string config_path = take(flags, "config");
    if (!config_path.empty()) cfg = parse_config_file(config_path);
    if (flags.count("no-saq")) {
        cfg.use_saq = false;
        flags.erase("no-saq");
    }
    if (flags.count("no-sce")) {
        cfg.use_sce = false;
        flags.erase("no-sce");
    }
    if (flags.count("no-pce")) {
        cfg.use_pce = false;
        flags.erase("no-pce");
    }
    for (auto it = flags.begin(); it != flags.end();) {
        std::string key = it->first;
        for (char& c : key)
            if (c == '-') c = '_';
        apply_config_kv(cfg, key, it->second);  // unknown key -> ConfigError
        it = flags.erase(it);
    }
    return cfg;
}

int cmd_gen_data(std::map<std::string, std::string>& flags) {
    const int writers = std::stoi(take(flags, "writers", "8"));
    const int words = std::stoi(take(flags, "words", "64"));
    const uint64_t seed = std::stoull(take(flags, "seed", "1"));
    const std::string out = take(flags, "out", "", true);
    const float seen_fraction = std::stof(take(flags, "seen-fraction", "0.75"));
    const float iv_fraction = std::stof(take(flags, "iv-fraction", "0.75"));
    reject_leftover(flags);

    std::vector<WriterStyle> styles = make_writers(writers, seed);
    DatasetManifest m = build_dataset(styles, words, seed, out, seen_fraction, iv_fraction);
    std::printf("wrote %zu samples from %d writers to %s\n", m.entries.size(), writers,
                out.c_str());
    return 0;
}

int cmd_train_ae(std::map<std::string, std::string>& flags) {
    RunConfig cfg = config_from_flags(flags);
    reject_leftover(flags);
    AeTrainResult r = train_autoencoder(cfg);
    std::printf("ae trained: heldout mse %.6f, latent std %.4f -> %s\n",
                static_cast<double>(r.heldout_mse), static_cast<double>(r.latent_std),
                r.checkpoint_path.c_str());
    return 0;
}

int cmd_train(std::map<std::string, std::string>& flags) {
    RunConfig cfg = config_from_flags(flags);
    reject_leftover(flags);
    TrainResult r = train_generator(cfg);
    const StepLog& last = r.log.back();
    std::printf("trained %d steps: L_total %.4f (den %.4f pce %.4f sce %.4f saq %.4f) -> %s\n",
                last.step + 1, static_cast<double>(last.total), static_cast<double>(last.den),
                static_cast<double>(last.pce), static_cast<double>(last.sce),
                static_cast<double>(last.saq), r.checkpoint_path.c_str());
    return 0;
}

int cmd_sample(std::map<std::string, std::string>& flags) {
    const std::string ref_path = take(flags, "ref", "", true);
    const std::string text = take(flags, "text", "", true);
    const uint64_t seed = std::stoull(take(flags, "seed", "0"));
    const std::string ckpt = take(flags, "ckpt", "out/generator.ckpt");
    const std::string ae_path = take(flags, "ae", "out/ae.ckpt");
    const int steps = std::stoi(take(flags, "steps", "50"));
    const float guidance = std::stof(take(flags, "scale", "7.5"));
    std::string out_path = take(flags, "out", "");
    reject_leftover(flags);
    if (out_path.empty()) out_path = "out/" + text + "_" + std::to_string(seed) + ".ppm";

    auto model = load_generator(ckpt);
    auto ae = load_autoencoder(ae_path);
    Tensor ref = read_ppm(ref_path);
    Tensor img = sample_image(*model, *ae, ref, text, seed, steps, guidance);
    fs::create_directories(fs::path(out_path).parent_path().string().empty()
                               ? "."
                               : fs::path(out_path).parent_path().string());
    write_ppm(out_path, img);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

int cmd_evaluate(std::map<std::string, std::string>& flags) {
    const std::string data_dir = take(flags, "data", "", true);
    const std::string ckpt = take(flags, "ckpt", "out/generator.ckpt");
    const std::string ae_path = take(flags, "ae", "out/ae.ckpt");
    const std::string out_path = take(flags, "out", "");
    EvalOptions opts;
    opts.samples_per_bucket = std::stoi(take(flags, "samples", "24"));
    opts.sample_steps = std::stoi(take(flags, "steps", "50"));
    opts.guidance = std::stof(take(flags, "scale", "7.5"));
    opts.seed = std::stoull(take(flags, "seed", "1"));
    reject_leftover(flags);

    auto model = load_generator(ckpt);
    auto ae = load_autoencoder(ae_path);
    DatasetManifest m = load_manifest(data_dir);
    EvalReport rep = evaluate(*model, *ae, m, opts);
    const std::string json = rep.to_json();
    std::printf("%s\n", json.c_str());
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::trunc);
        f << json << "\n";
        std::printf("wrote %s\n", out_path.c_str());
    }
    return 0;
}

int cmd_dump_attn(std::map<std::string, std::string>& flags) {
    const std::string ref_path = take(flags, "ref", "", true);
    const std::string text = take(flags, "text", "", true);
    const int t_probe = std::stoi(take(flags, "t", "", true));
    const std::string ckpt = take(flags, "ckpt", "out/generator.ckpt");
    const std::string ae_path = take(flags, "ae", "out/ae.ckpt");
    const uint64_t seed = std::stoull(take(flags, "seed", "0"));
    const std::string out_dir = take(flags, "out", "out/attn");
    reject_leftover(flags);

    auto model = load_generator(ckpt);
    auto ae = load_autoencoder(ae_path);
    Tensor ref = read_ppm(ref_path);
    const int count = dump_attention_maps(*model, *ae, ref, text, t_probe, seed, out_dir);
    std::printf("wrote %d heatmaps to %s\n", count, out_dir.c_str());
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    if (argc < 2) {
        std::fputs(kUsage, stderr);
        return 2;
    }
    const std::string cmd = argv[1];
    try {
        auto flags = parse_flags(argc, argv, 2);
        if (cmd == "gen-data") return cmd_gen_data(flags);
        if (cmd == "train-ae") return cmd_train_ae(flags);
        if (cmd == "train") return cmd_train(flags);
        if (cmd == "sample") return cmd_sample(flags);
        if (cmd == "evaluate") return cmd_evaluate(flags);
        if (cmd == "dump-attn") return cmd_dump_attn(flags);
        std::fprintf(stderr, "unknown subcommand: %s\n%s", cmd.c_str(), kUsage);
        return 2;
    } catch (const CliError& e) {
        std::fprintf(stderr, "error: %s\n%s", e.what(), kUsage);
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n%s", e.what(), kUsage);
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace glyphdiff
