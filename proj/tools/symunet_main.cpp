#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "symunet/checkpoint.hpp"
#include "symunet/train.hpp"

namespace fs = std::filesystem;
using namespace symunet;

namespace {

void apply_thread_cap() {
#ifdef _OPENMP
    if (const char* env = std::getenv("SYMUNET_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) omp_set_num_threads(n);
    }
#endif
}

Configs load_configs(const std::string& config_path, const std::vector<std::string>& overrides) {
    Configs cfg;
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("cannot open config file '" + config_path + "'");
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        cfg = parse_config_text(text);
    }
    for (const auto& kv : overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override '" + kv + "' is not of the form key=value");
        apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

int cmd_synth(const std::string& clean_dir, const std::string& kinds_csv,
              const std::string& out_dir, std::uint64_t seed) {
    std::vector<DegradationKind> kinds;
    for (const auto& part : detail::split(kinds_csv, ','))
        if (!detail::trim(part).empty())
            kinds.push_back(degradation_kind_from_string(detail::trim(part)));
    if (kinds.empty()) {
        std::string list;
        for (const auto& n : degradation_kind_names()) list += (list.empty() ? "" : ", ") + n;
        throw ConfigError("no degradation kinds given; valid kinds: " + list);
    }
    const auto cleans = list_pngs_sorted(clean_dir);
    if (cleans.empty()) throw ConfigError("no .png files found in '" + clean_dir + "'");
    fs::create_directories(out_dir);

    std::vector<ManifestEntry> entries;
    std::uint64_t line = 0;
    for (size_t i = 0; i < cleans.size(); ++i) {
        const auto img = read_png_rgb(cleans[i]);
        for (const auto kind : kinds) {
            ManifestEntry e;
            e.clean_path = cleans[i];
            e.spec = default_spec(kind, derive_seed(seed, line), i);
            ++line;
            const auto stem = fs::path(cleans[i]).stem().string();
            const auto out_png = fs::path(out_dir) / (stem + "." + to_string(kind) + ".png");
            write_png_rgb(out_png.string(), degrade(img, e.spec));
            entries.push_back(std::move(e));
        }
    }
    save_manifest((fs::path(out_dir) / "manifest.txt").string(), entries);
    std::printf("wrote %zu degraded images and manifest.txt to %s\n", entries.size(),
                out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& out_dir, const std::string& resume,
              const std::vector<std::string>& overrides) {
    const auto entries = load_manifest(manifest_path);
    Model<float> model;
    TrainState<float> state;
    TrainConfig tcfg;
    if (!resume.empty()) {
        auto loaded = load_checkpoint<float>(resume);
        if (!loaded.has_state)
            throw ConfigError("checkpoint '" + resume + "' carries no optimizer state to resume");
        model = std::move(loaded.model);
        state = std::move(loaded.state);
        tcfg = loaded.configs.train;
        if (!overrides.empty() || !config_path.empty())
            throw ConfigError("--resume restores the checkpoint config; drop --config/--set");
    } else {
        Configs cfg = load_configs(config_path, overrides);
        cfg.model.validate();
        cfg.train.validate();
        tcfg = cfg.train;
        model = build_model<float>(cfg.model, cfg.train.seed);
        state.rng = Rng(tcfg.seed);
    }
    std::vector<TrainLogEntry> log;
    train_loop(model, entries, tcfg, out_dir, state, &log);
    if (!log.empty())
        std::printf("trained %lld steps; final loss %.6e, batch PSNR %.2f dB\n",
                    static_cast<long long>(log.back().step), log.back().loss, log.back().psnr);
    std::printf("checkpoint: %s\n", (fs::path(out_dir) / "checkpoint_final").string().c_str());
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& in_path, const std::string& out_path) {
    auto loaded = load_checkpoint<float>(ckpt);
    const auto img = read_png_rgb(in_path);
    const auto restored = restore_image(loaded.model, img);
    write_png_rgb(out_path, restored);
    std::printf("restored %s -> %s\n", in_path.c_str(), out_path.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest_path, const std::string& csv) {
    auto loaded = load_checkpoint<float>(ckpt);
    const auto entries = load_manifest(manifest_path);
    const auto rows = evaluate_pairs(loaded.model, entries);

    // Table-style text: tasks as columns, PSNR/SSIM cells, average last.
    std::string head = "          ";
    std::string body = "PSNR/SSIM ";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), " %-14s", r.task.c_str());
        head += buf;
        std::snprintf(buf, sizeof(buf), " %5.2f/%-8.4f", r.psnr, r.ssim);
        body += buf;
    }
    std::printf("%s\n%s\n", head.c_str(), body.c_str());

    if (!csv.empty()) {
        std::ofstream os(csv);
        os << "task,n,psnr,ssim\n";
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f", r.task.c_str(), r.count, r.psnr,
                          r.ssim);
            os << buf << '\n';
        }
        std::printf("csv: %s\n", csv.c_str());
    }
    return 0;
}

int cmd_count(const std::string& config_path, const std::vector<std::string>& overrides,
              int height, int width) {
    Configs cfg = load_configs(config_path, overrides);
    cfg.model.validate();
    auto model = build_model<float>(cfg.model, 0);
    const auto count = count_parameters(model);
    const double dev = (static_cast<double>(count) - 22.26e6) / 22.26e6 * 100.0;
    std::printf("parameters: %lld (%.2fM, %+.2f%% vs 22.26M)\n", static_cast<long long>(count),
                static_cast<double>(count) / 1e6, dev);
    const auto macs = estimate_flops(model, height, width);
    std::printf("flops @ %dx%d: %lld MACs (%.2fG, %.3fx of 78.47G)\n", height, width,
                static_cast<long long>(macs), static_cast<double>(macs) / 1e9,
                static_cast<double>(macs) / 78.47e9);
    return 0;
}

int cmd_dump_features(const std::string& ckpt, const std::string& image_path,
                      const std::string& taps_csv, const std::string& out_dir) {
    auto loaded = load_checkpoint<float>(ckpt);
    std::vector<std::string> taps;
    for (const auto& part : detail::split(taps_csv, ','))
        if (!detail::trim(part).empty()) taps.push_back(detail::trim(part));
    if (taps.empty()) throw ConfigError("no taps given (use e.g. --taps f_enc_0,f_dec_0)");
    const auto img = read_png_rgb(image_path);
    auto [padded, original] = pad_to_multiple(img, 1 << loaded.model.config.levels);
    auto features = extract_features(loaded.model, padded, taps);
    fs::create_directories(out_dir);
    for (const auto& [name, t] : features) {
        save_symt((fs::path(out_dir) / (name + ".symt")).string(), t);
        // channel mean, then min-max normalization
        const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
        auto mean = Tensor<float>::zeros({h, w});
        for (int ci = 0; ci < c; ++ci)
            for (std::int64_t p = 0; p < static_cast<std::int64_t>(h) * w; ++p)
                mean.data()[static_cast<size_t>(p)] +=
                    t.data()[static_cast<size_t>(ci) * h * w + static_cast<size_t>(p)] / c;
        float lo = mean.data()[0], hi = mean.data()[0];
        for (float v : mean.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi > lo)
            for (auto& v : mean.data()) v = (v - lo) / (hi - lo);
        else
            for (auto& v : mean.data()) v = 0.0f;
        write_png_gray((fs::path(out_dir) / (name + ".png")).string(), mean);
    }
    std::printf("dumped %zu taps to %s\n", features.size(), out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();
    CLI::App app{"SymUNet / SE-SymUNet all-in-one image restoration"};
    app.require_subcommand(1);

    std::string clean_dir, out_dir, kinds = "noise,haze,rain,blur,lowlight";
    std::uint64_t seed = 0;
    auto* synth = app.add_subcommand("synth", "synthesize degraded images + manifest");
    synth->add_option("--clean-dir", clean_dir, "directory of clean PNGs")->required();
    synth->add_option("--out-dir", out_dir, "output directory")->required();
    synth->add_option("--kinds", kinds, "comma-separated degradation kinds");
    synth->add_option("--seed", seed, "global seed");

    std::string config_path, manifest_path, resume, train_out;
    std::vector<std::string> overrides;
    int steps = -1;
    std::string guidance_mode;
    bool asymmetric = false;
    std::uint64_t train_seed = 0;
    auto* train = app.add_subcommand("train", "train a model on a manifest");
    train->add_option("--config", config_path, "key=value config file");
    train->add_option("--manifest", manifest_path, "training manifest")->required();
    train->add_option("--out-dir", train_out, "output directory")->required();
    train->add_option("--resume", resume, "checkpoint directory to resume from");
    train->add_option("--steps", steps, "override total_steps");
    train->add_option("--guidance-mode", guidance_mode, "none|one_way|bidirectional");
    train->add_flag("--asymmetric", asymmetric, "build the asymmetric ablation variant");
    auto* seed_opt = train->add_option("--seed", train_seed, "override train seed");
    train->add_option("--set", overrides, "extra key=value overrides");

    std::string ckpt, in_path, out_path;
    auto* infer = app.add_subcommand("infer", "restore one image");
    infer->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
    infer->add_option("--in", in_path, "input PNG")->required();
    infer->add_option("--out", out_path, "output PNG")->required();

    std::string eval_ckpt, eval_manifest, eval_csv;
    auto* evalc = app.add_subcommand("eval", "PSNR/SSIM over a pairs manifest");
    evalc->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    evalc->add_option("--manifest", eval_manifest, "pairs manifest")->required();
    evalc->add_option("--csv", eval_csv, "also write CSV here");

    std::string count_config;
    std::vector<std::string> count_overrides;
    int height = 256, width = 256;
    auto* count = app.add_subcommand("count", "parameter and FLOP accounting");
    count->add_option("--config", count_config, "key=value config file");
    count->add_option("--set", count_overrides, "extra key=value overrides");
    count->add_option("--height", height, "FLOP estimate height");
    count->add_option("--width", width, "FLOP estimate width");

    std::string dump_ckpt, dump_image, dump_taps = "f_enc_0,f_dec_0", dump_out;
    auto* dump = app.add_subcommand("dump-features", "write feature taps as PNG + SYMT");
    dump->add_option("--checkpoint", dump_ckpt, "checkpoint directory")->required();
    dump->add_option("--image", dump_image, "input PNG")->required();
    dump->add_option("--taps", dump_taps, "comma-separated tap names");
    dump->add_option("--out-dir", dump_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(clean_dir, kinds, out_dir, seed);
        if (train->parsed()) {
            if (steps >= 0) overrides.push_back("total_steps=" + std::to_string(steps));
            if (!guidance_mode.empty()) overrides.push_back("guidance_mode=" + guidance_mode);
            if (asymmetric) overrides.push_back("symmetric=false");
            if (seed_opt->count() > 0) overrides.push_back("seed=" + std::to_string(train_seed));
            return cmd_train(config_path, manifest_path, train_out, resume, overrides);
        }
        if (infer->parsed()) return cmd_infer(ckpt, in_path, out_path);
        if (evalc->parsed()) return cmd_eval(eval_ckpt, eval_manifest, eval_csv);
        if (count->parsed()) return cmd_count(count_config, count_overrides, height, width);
        if (dump->parsed()) return cmd_dump_features(dump_ckpt, dump_image, dump_taps, dump_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
