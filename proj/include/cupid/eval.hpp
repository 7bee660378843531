#pragma once

// Downstream protocol: patient-disjoint 60-20-20 folds, linear probing with
// multinomial logistic regression, joint fine-tuning with early stopping,
// accuracy / macro-F1 / macro one-vs-rest AUC, and the SDNN-stratified
// reconstruction report.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cupid/model.hpp"
#include "cupid/train.hpp"

namespace cupid {

// ----------------------------- folds -----------------------------

struct FoldPlan {
    struct Fold {
        std::vector<std::string> train, val, test;
    };
    std::vector<Fold> folds;

    // Shuffled patients, rotated chunks: test and val take ~20% each, the rest
    // trains. Disjointness is asserted before returning.
    static FoldPlan make(std::vector<std::string> patients, int n_folds, uint64_t seed);

    // Single fold from a fixed split file ("<patient>,train|test" lines, '#'
    // comments); a seeded share of the train patients becomes the validation
    // split. For datasets that ship a recommended train-test split.
    static FoldPlan from_split_file(const std::string& text, double val_fraction, uint64_t seed);

    void verify_disjoint() const;  // throws contract_error on overlap
};

// ----------------------------- metrics -----------------------------

struct Metrics {
    double accuracy = 0;
    double macro_f1 = 0;
    double macro_auc = 0;
};

// scores: per-sample class-probability rows. Classes absent from y_true are
// excluded from the macro means with a warning on stderr.
Metrics compute_metrics(const std::vector<int>& y_true,
                        const std::vector<std::vector<double>>& scores);

// Tie-aware rank AUC of one class versus the rest.
double rank_auc(const std::vector<int>& y_true, const std::vector<double>& score, int positive);

struct FoldMetrics {
    int fold = 0;
    Metrics metrics;
    int64_t n_test = 0;
};

struct MetricReport {
    std::vector<FoldMetrics> folds;
    double acc_mean = 0, acc_std = 0;
    double f1_mean = 0, f1_std = 0;
    double auc_mean = 0, auc_std = 0;
    void finalize();  // mean and sample std over folds
};

// ----------------------------- linear probe -----------------------------

struct ProbeConfig {
    double l2 = 1e-4;        // ridge penalty on weights (bias excluded)
    int max_iters = 10000;
    double grad_tol = 1e-6;  // L2 norm of the full gradient
};

// Multinomial logistic regression fitted by full-batch gradient descent with
// backtracking line search from a zero init; deterministic.
struct LogisticModel {
    int n_classes = 0;
    int dim = 0;
    std::vector<double> w;  // n_classes x (dim + 1), bias last

    std::vector<double> predict_proba(const real* x) const;
    int predict(const real* x) const;
};

LogisticModel fit_logistic(const std::vector<std::vector<real>>& features,
                           const std::vector<int>& labels, int n_classes,
                           const ProbeConfig& cfg = {});

MetricReport linear_probe(const std::vector<std::vector<real>>& features,
                          const std::vector<int>& labels,
                          const std::vector<std::string>& patients, const FoldPlan& plan,
                          const ProbeConfig& cfg = {});

// ----------------------------- fine-tuning -----------------------------

class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}
    // Returns true when training should stop after this epoch.
    bool should_stop(double val_loss, int epoch);
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_; }

private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = -1;
    int since_best_ = 0;
};

struct FineTuneConfig {
    double lr = 1e-4;  // Adam, no weight decay
    double encoder_lr_scale = 1.0;
    int batch_size = 32;
    int max_epochs = 60;
    int patience = 5;
    uint64_t seed = 7;
};

MetricReport fine_tune(const ModelParams& pretrained, const std::vector<EcgWindow>& data,
                       const FoldPlan& plan, const FineTuneConfig& cfg);

// ----------------------------- reconstruction analyses -----------------------------

// Per-window masked-L1 under frozen params and given masks; no tape.
std::vector<double> masked_l1_per_window(const ModelParams& params,
                                         const std::vector<EcgWindow>& windows,
                                         const std::vector<MaskSpec>& masks);

struct SdnnBinRow {
    double lo = 0, hi = 0;
    int64_t count = 0;
    double mtae_loss = 0, cupid_loss = 0;
};

// Buckets windows by SDNN, draws one seeded mask per window shared by both
// variants, reports the mean masked loss per bin. Empty bins keep count 0.
std::vector<SdnnBinRow> sdnn_stratified_error(const ModelParams& mtae_params,
                                              const ModelParams& cupid_params,
                                              const std::vector<EcgWindow>& windows,
                                              const std::vector<double>& bin_edges,
                                              uint64_t seed);

// ----------------------------- ablation sweep -----------------------------

struct SweepCell {
    int patch_size = 20;
    double mask_ratio = 0.4;
    int64_t iterations = 0;  // 0 = keep base
    int enc_blocks = 0;      // 0 = keep base
};

struct SweepRow {
    SweepCell cell;
    double mtae_acc = 0, cupid_acc = 0;
    bool skipped = false;
    std::string skip_reason;
};

// One pretrain + probe per cell per variant on the given labeled corpus.
std::vector<SweepRow> sweep(const std::vector<EcgWindow>& data, const ModelConfig& base_model,
                            const TrainConfig& base_train, const std::vector<SweepCell>& grid,
                            const std::string& work_dir);

// Frozen-encoder features for a whole dataset.
std::vector<std::vector<real>> extract_features(const ModelParams& params,
                                                const std::vector<EcgWindow>& windows);

}  // namespace cupid
