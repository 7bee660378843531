#pragma once

// Pretraining loop: with-replacement batches, a fresh mask per sample,
// masked-L1 objective, AdamW with decoupled weight decay, CSV loss log and
// periodic checkpoints that allow bit-exact resume.

#include <cstdint>
#include <string>
#include <vector>

#include "cupid/model.hpp"

namespace cupid {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct AdamWState {
    OptMoments moments;
    int64_t step = 0;
};

void adamw_init(AdamWState& state, const NamedTensors& params);

// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta.
// Aborts with numeric_error naming the parameter on a non-finite gradient.
// lr_scales, when given, multiplies the learning rate per parameter.
void adamw_step(const NamedTensors& params, AdamWState& state, const AdamWConfig& cfg,
                const std::vector<double>* lr_scales = nullptr);

struct TrainConfig {
    int64_t iterations = 45000;
    int batch_size = 256;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    uint64_t seed = 1;
    int64_t checkpoint_every = 0;  // 0 = final checkpoint only
    int64_t warmup = 0;            // optional linear LR warmup, off by default

    void validate() const;
    AdamWConfig adamw() const { return {lr, beta1, beta2, eps, weight_decay}; }
};

struct TrainResult {
    std::vector<double> losses;  // one entry per completed iteration this run
    std::string final_checkpoint;
    std::string loss_csv;
};

// Writes run_dir/loss.csv (iteration,loss,wall_ms) and checkpoints under
// run_dir. resume_from continues an earlier run bit-exactly: checkpoints store
// optimizer moments plus the data-stream RNG state, and the in-memory state is
// snapped to the stored f32 values whenever a checkpoint is written.
TrainResult train(const std::vector<EcgWindow>& data, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const std::string& run_dir,
                  const std::string& resume_from = "");

}  // namespace cupid
