#pragma once

#include "symunet/checkpoint.hpp"
#include "symunet/dataset.hpp"
#include "symunet/loss.hpp"
#include "symunet/metrics.hpp"

namespace symunet {

struct TrainLogEntry {
    std::int64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double psnr = 0.0;
};

inline std::string format_log_line(const TrainLogEntry& e) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%lld,%.10e,%.10e,%.6f", static_cast<long long>(e.step), e.lr,
                  e.loss, e.psnr);
    return buf;
}

// Deterministic single-writer loop: batch sampling, crops and flips draw from
// the serialized rng, so resuming from a checkpoint reproduces the
// uninterrupted trajectory bit-exactly. Checkpoints land in
// <out_dir>/checkpoint_<step> plus <out_dir>/checkpoint_final; the CSV log
// (step,lr,loss,psnr_val) is written alongside.
template <typename T>
void train_loop(Model<T>& model, const std::vector<ManifestEntry>& data, const TrainConfig& tcfg,
                const std::string& out_dir, TrainState<T>& state,
                std::vector<TrainLogEntry>* log_out = nullptr) {
    tcfg.validate();
    check_config(!data.empty(), "training manifest is empty");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const bool fresh_log = state.optim.step == 0;
    std::ofstream log(fs::path(out_dir) / "training_log.csv", fresh_log ? std::ios::trunc
                                                                        : std::ios::app);
    if (fresh_log) log << "step,lr,loss,psnr_val\n";

    PngCache cache;
    const int mult = 1 << model.config.levels;
    check_config(tcfg.crop % mult == 0, "crop size " + std::to_string(tcfg.crop) +
                                            " must be divisible by 2^levels=" +
                                            std::to_string(mult));

    while (state.optim.step < tcfg.total_steps) {
        const std::int64_t step = state.optim.step;
        const double lr = cosine_lr(step, tcfg.total_steps, tcfg.lr0, tcfg.lr_min);

        std::vector<Tensor<T>> outputs, targets;
        Tensor<T> loss_sum;
        for (int b = 0; b < tcfg.batch_size; ++b) {
            const auto& entry = data[state.rng.uniform_int(data.size())];
            ImagePair pair = load_pair(entry, &cache);
            if (pair.clean.dim(1) > tcfg.crop || pair.clean.dim(2) > tcfg.crop)
                pair = random_crop_pair(pair, tcfg.crop, state.rng.next_u64());
            if (tcfg.augment_flips) pair = random_flips(pair, state.rng.next_u64());
            check_dims(pair.clean.dim(1) % mult == 0 && pair.clean.dim(2) % mult == 0,
                       "training image dims must be divisible by 2^levels");

            Tensor<T> y = Tensor<T>::from_data(pair.degraded.shape(),
                                               std::vector<T>(pair.degraded.data().begin(),
                                                              pair.degraded.data().end()));
            Tensor<T> x = Tensor<T>::from_data(pair.clean.shape(),
                                               std::vector<T>(pair.clean.data().begin(),
                                                              pair.clean.data().end()));
            Tensor<T> out = forward_auto(model, y);
            Tensor<T> l = total_loss(out, x, tcfg.lambda_fft);
            loss_sum = loss_sum.defined() ? add(loss_sum, l) : l;
            outputs.push_back(out);
            targets.push_back(x);
        }
        Tensor<T> loss = scale(loss_sum, 1.0 / tcfg.batch_size);
        const double loss_val = static_cast<double>(loss.data()[0]);
        if (!std::isfinite(loss_val))
            throw TrainError("non-finite loss at step " + std::to_string(step) +
                             "; last checkpoint retained");
        loss.backward();
        adamw_step(model, state.optim, lr, tcfg.beta1, tcfg.beta2, tcfg.weight_decay);
        zero_grads(model);

        double batch_psnr = 0.0;
        for (size_t i = 0; i < outputs.size(); ++i) batch_psnr += psnr(outputs[i], targets[i]);
        batch_psnr /= static_cast<double>(outputs.size());

        TrainLogEntry e{state.optim.step, lr, loss_val, batch_psnr};
        log << format_log_line(e) << '\n';
        if (log_out) log_out->push_back(e);

        if (state.optim.step % tcfg.checkpoint_every == 0 ||
            state.optim.step == tcfg.total_steps) {
            save_checkpoint((fs::path(out_dir) / ("checkpoint_" + std::to_string(state.optim.step)))
                                .string(),
                            model, tcfg, &state);
        }
    }
    save_checkpoint((fs::path(out_dir) / "checkpoint_final").string(), model, tcfg, &state);
    log.flush();
}

// Restoration of one [0,1] image of arbitrary size: pad to the network's
// divisibility requirement, run, crop back, clamp.
template <typename T>
Tensor<float> restore_image(const Model<T>& model, const Tensor<float>& image) {
    NoGradGuard ng;
    auto [padded, original] = pad_to_multiple(image, 1 << model.config.levels);
    Tensor<T> y = Tensor<T>::from_data(padded.shape(),
                                       std::vector<T>(padded.data().begin(), padded.data().end()));
    Tensor<T> out = forward_auto(model, y);
    Tensor<float> outf = Tensor<float>::from_data(
        out.shape(), std::vector<float>(out.data().begin(), out.data().end()));
    Tensor<float> cropped = crop_back(outf, original);
    for (auto& v : cropped.data()) v = std::min(1.0f, std::max(0.0f, v));
    return cropped;
}

struct EvalRow {
    std::string task;
    int count = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

// Per-task and average PSNR/SSIM over a pairs manifest.
template <typename T>
std::vector<EvalRow> evaluate_pairs(const Model<T>& model,
                                    const std::vector<ManifestEntry>& entries) {
    check_config(!entries.empty(), "evaluation manifest is empty");
    std::map<std::string, EvalRow> rows;
    EvalRow avg{"average", 0, 0.0, 0.0};
    PngCache cache;
    for (const auto& e : entries) {
        ImagePair pair = load_pair(e, &cache);
        Tensor<float> restored = restore_image(model, pair.degraded);
        const double p = psnr(restored, pair.clean);
        const double s = ssim(restored, pair.clean);
        auto& row = rows[to_string(e.spec.kind)];
        row.task = to_string(e.spec.kind);
        ++row.count;
        row.psnr += p;
        row.ssim += s;
        ++avg.count;
        avg.psnr += p;
        avg.ssim += s;
    }
    std::vector<EvalRow> out;
    for (auto& [k, row] : rows) {
        row.psnr /= row.count;
        row.ssim /= row.count;
        out.push_back(row);
    }
    avg.psnr /= avg.count;
    avg.ssim /= avg.count;
    out.push_back(avg);
    return out;
}

}  // namespace symunet
