#include "cupid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>

#include "cupid/rng.hpp"
#include "cupid/util.hpp"

namespace cupid {

// ----------------------------- folds -----------------------------

FoldPlan FoldPlan::make(std::vector<std::string> patients, int n_folds, uint64_t seed) {
    if (n_folds < 2) throw config_error("folds: need at least 2 folds");
    std::sort(patients.begin(), patients.end());
    patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
    const int64_t n = static_cast<int64_t>(patients.size());
    if (n < n_folds)
        throw config_error("folds: " + std::to_string(n) + " patients cannot fill " +
                           std::to_string(n_folds) + " folds");

    Rng rng(seed);
    for (int64_t i = n - 1; i > 0; --i) {
        const int64_t j = static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(i + 1)));
        std::swap(patients[static_cast<size_t>(i)], patients[static_cast<size_t>(j)]);
    }

    // rotated contiguous chunks; test and val take one chunk each
    std::vector<int64_t> bounds(static_cast<size_t>(n_folds) + 1);
    for (int f = 0; f <= n_folds; ++f) bounds[static_cast<size_t>(f)] = n * f / n_folds;

    FoldPlan plan;
    for (int f = 0; f < n_folds; ++f) {
        Fold fold;
        const int vf = (f + 1) % n_folds;
        for (int c = 0; c < n_folds; ++c) {
            for (int64_t i = bounds[static_cast<size_t>(c)]; i < bounds[static_cast<size_t>(c) + 1]; ++i) {
                const std::string& p = patients[static_cast<size_t>(i)];
                if (c == f)
                    fold.test.push_back(p);
                else if (c == vf)
                    fold.val.push_back(p);
                else
                    fold.train.push_back(p);
            }
        }
        plan.folds.push_back(std::move(fold));
    }
    plan.verify_disjoint();
    return plan;
}

FoldPlan FoldPlan::from_split_file(const std::string& text, double val_fraction, uint64_t seed) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw config_error("split file: val fraction must lie in [0, 1)");
    std::vector<std::string> train, test;
    int line_no = 0;
    for (const std::string& raw : split(text, '\n')) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const auto cols = split(line, ',');
        if (cols.size() != 2)
            throw parse_error("split file line " + std::to_string(line_no) +
                              ": expected '<patient>,train|test'");
        const std::string patient = trim(cols[0]);
        const std::string which = trim(cols[1]);
        if (which == "train")
            train.push_back(patient);
        else if (which == "test")
            test.push_back(patient);
        else
            throw parse_error("split file line " + std::to_string(line_no) +
                              ": split must be train or test, got '" + which + "'");
    }
    if (train.empty() || test.empty())
        throw config_error("split file: needs at least one train and one test patient");

    // seeded carve-out of validation patients from the train side
    std::sort(train.begin(), train.end());
    train.erase(std::unique(train.begin(), train.end()), train.end());
    Rng rng(seed);
    for (size_t i = train.size(); i > 1; --i)
        std::swap(train[i - 1], train[rng.bounded(i)]);
    const size_t n_val = static_cast<size_t>(std::llround(val_fraction * double(train.size())));

    FoldPlan plan;
    Fold fold;
    fold.val.assign(train.begin(), train.begin() + n_val);
    fold.train.assign(train.begin() + n_val, train.end());
    fold.test = std::move(test);
    plan.folds.push_back(std::move(fold));
    plan.verify_disjoint();
    return plan;
}

void FoldPlan::verify_disjoint() const {
    for (size_t f = 0; f < folds.size(); ++f) {
        std::set<std::string> train(folds[f].train.begin(), folds[f].train.end());
        std::set<std::string> val(folds[f].val.begin(), folds[f].val.end());
        for (const auto& p : folds[f].test)
            if (train.count(p) || val.count(p))
                throw contract_error("fold " + std::to_string(f) + ": patient '" + p +
                                     "' leaks into the test split");
        for (const auto& p : folds[f].val)
            if (train.count(p))
                throw contract_error("fold " + std::to_string(f) + ": patient '" + p +
                                     "' appears in both train and val");
    }
}

// ----------------------------- metrics -----------------------------

double rank_auc(const std::vector<int>& y_true, const std::vector<double>& score, int positive) {
    const size_t n = y_true.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return score[a] < score[b]; });

    // average ranks over ties, 1-based
    std::vector<double> rank(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && score[order[j + 1]] == score[order[i]]) ++j;
        const double avg = 0.5 * (double(i + 1) + double(j + 1));
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }

    double rank_sum = 0;
    int64_t n_pos = 0;
    for (size_t k = 0; k < n; ++k) {
        if (y_true[k] == positive) {
            rank_sum += rank[k];
            ++n_pos;
        }
    }
    const int64_t n_neg = static_cast<int64_t>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw config_error("auc: class " + std::to_string(positive) +
                           " needs both positives and negatives");
    return (rank_sum - 0.5 * double(n_pos) * double(n_pos + 1)) / (double(n_pos) * double(n_neg));
}

Metrics compute_metrics(const std::vector<int>& y_true,
                        const std::vector<std::vector<double>>& scores) {
    if (y_true.empty() || scores.size() != y_true.size())
        throw config_error("metrics: empty input or size mismatch");
    const int n_classes = static_cast<int>(scores[0].size());

    int64_t correct = 0;
    std::vector<int64_t> tp(static_cast<size_t>(n_classes), 0);
    std::vector<int64_t> fp(static_cast<size_t>(n_classes), 0);
    std::vector<int64_t> fn(static_cast<size_t>(n_classes), 0);
    std::vector<int64_t> support(static_cast<size_t>(n_classes), 0);
    for (size_t i = 0; i < y_true.size(); ++i) {
        int pred = 0;
        for (int c = 1; c < n_classes; ++c)
            if (scores[i][static_cast<size_t>(c)] > scores[i][static_cast<size_t>(pred)]) pred = c;
        const int truth = y_true[i];
        if (truth < 0 || truth >= n_classes) throw config_error("metrics: label out of range");
        support[static_cast<size_t>(truth)] += 1;
        if (pred == truth) {
            ++correct;
            tp[static_cast<size_t>(truth)] += 1;
        } else {
            fp[static_cast<size_t>(pred)] += 1;
            fn[static_cast<size_t>(truth)] += 1;
        }
    }

    Metrics m;
    m.accuracy = double(correct) / double(y_true.size());

    double f1_sum = 0, auc_sum = 0;
    int f1_classes = 0, auc_classes = 0;
    for (int c = 0; c < n_classes; ++c) {
        const int64_t sup = support[static_cast<size_t>(c)];
        if (sup == 0) {
            std::fprintf(stderr, "[metrics] class %d absent from y_true, excluded from macro means\n", c);
            continue;
        }
        const double denom = double(2 * tp[static_cast<size_t>(c)] + fp[static_cast<size_t>(c)] +
                                    fn[static_cast<size_t>(c)]);
        f1_sum += denom > 0 ? 2.0 * double(tp[static_cast<size_t>(c)]) / denom : 0.0;
        ++f1_classes;
        if (sup < static_cast<int64_t>(y_true.size())) {  // AUC needs both sides
            std::vector<double> class_score(y_true.size());
            for (size_t i = 0; i < y_true.size(); ++i)
                class_score[i] = scores[i][static_cast<size_t>(c)];
            auc_sum += rank_auc(y_true, class_score, c);
            ++auc_classes;
        }
    }
    if (f1_classes == 0) throw config_error("metrics: no class present in y_true");
    if (auc_classes == 0) throw config_error("metrics: AUC undefined, y_true holds one class");
    m.macro_f1 = f1_sum / double(f1_classes);
    m.macro_auc = auc_sum / double(auc_classes);
    return m;
}

void MetricReport::finalize() {
    const auto stats = [this](auto pick) {
        double mean = 0;
        for (const auto& f : folds) mean += pick(f.metrics);
        mean /= double(folds.size());
        double ss = 0;
        for (const auto& f : folds) {
            const double d = pick(f.metrics) - mean;
            ss += d * d;
        }
        const double sd = folds.size() > 1 ? std::sqrt(ss / double(folds.size() - 1)) : 0.0;
        return std::make_pair(mean, sd);
    };
    std::tie(acc_mean, acc_std) = stats([](const Metrics& m) { return m.accuracy; });
    std::tie(f1_mean, f1_std) = stats([](const Metrics& m) { return m.macro_f1; });
    std::tie(auc_mean, auc_std) = stats([](const Metrics& m) { return m.macro_auc; });
}

// ----------------------------- linear probe -----------------------------

std::vector<double> LogisticModel::predict_proba(const real* x) const {
    std::vector<double> z(static_cast<size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        const double* wc = w.data() + static_cast<size_t>(c) * (dim + 1);
        double acc = wc[dim];  // bias
        for (int j = 0; j < dim; ++j) acc += wc[j] * double(x[j]);
        z[static_cast<size_t>(c)] = acc;
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double denom = 0;
    for (double& v : z) {
        v = std::exp(v - mx);
        denom += v;
    }
    for (double& v : z) v /= denom;
    return z;
}

int LogisticModel::predict(const real* x) const {
    const auto p = predict_proba(x);
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

namespace {

// objective and gradient of mean cross-entropy + 0.5*l2*||W||^2 (bias free)
double logistic_objective(const std::vector<std::vector<real>>& x, const std::vector<int>& y,
                          int n_classes, int dim, double l2, const std::vector<double>& w,
                          std::vector<double>* grad) {
    const size_t n = x.size();
    const int stride = dim + 1;
    if (grad) grad->assign(w.size(), 0.0);
    double loss = 0;
    std::vector<double> z(static_cast<size_t>(n_classes));
    for (size_t i = 0; i < n; ++i) {
        for (int c = 0; c < n_classes; ++c) {
            const double* wc = w.data() + static_cast<size_t>(c) * stride;
            double acc = wc[dim];
            for (int j = 0; j < dim; ++j) acc += wc[j] * double(x[i][static_cast<size_t>(j)]);
            z[static_cast<size_t>(c)] = acc;
        }
        const double mx = *std::max_element(z.begin(), z.end());
        double denom = 0;
        for (int c = 0; c < n_classes; ++c) {
            z[static_cast<size_t>(c)] = std::exp(z[static_cast<size_t>(c)] - mx);
            denom += z[static_cast<size_t>(c)];
        }
        loss -= std::log(z[static_cast<size_t>(y[i])] / denom);
        if (grad) {
            for (int c = 0; c < n_classes; ++c) {
                const double p = z[static_cast<size_t>(c)] / denom;
                const double delta = (p - (c == y[i] ? 1.0 : 0.0)) / double(n);
                double* gc = grad->data() + static_cast<size_t>(c) * stride;
                for (int j = 0; j < dim; ++j) gc[j] += delta * double(x[i][static_cast<size_t>(j)]);
                gc[dim] += delta;
            }
        }
    }
    loss /= double(n);
    for (int c = 0; c < n_classes; ++c) {
        const double* wc = w.data() + static_cast<size_t>(c) * stride;
        for (int j = 0; j < dim; ++j) {
            loss += 0.5 * l2 * wc[j] * wc[j];
            if (grad) (*grad)[static_cast<size_t>(c) * stride + j] += l2 * wc[j];
        }
    }
    return loss;
}

}  // namespace

LogisticModel fit_logistic(const std::vector<std::vector<real>>& features,
                           const std::vector<int>& labels, int n_classes,
                           const ProbeConfig& cfg) {
    if (features.empty()) throw config_error("probe: no training samples");
    LogisticModel model;
    model.n_classes = n_classes;
    model.dim = static_cast<int>(features[0].size());
    model.w.assign(static_cast<size_t>(n_classes) * (model.dim + 1), 0.0);

    std::vector<double> grad;
    double f = logistic_objective(features, labels, n_classes, model.dim, cfg.l2, model.w, &grad);
    double step = 1.0;
    for (int it = 0; it < cfg.max_iters; ++it) {
        double gnorm2 = 0;
        for (double g : grad) gnorm2 += g * g;
        if (std::sqrt(gnorm2) < cfg.grad_tol) break;

        // backtracking line search with a gently growing initial step
        step = std::min(step * 2.0, 1e4);
        std::vector<double> trial(model.w.size());
        double f_new;
        while (true) {
            for (size_t i = 0; i < model.w.size(); ++i) trial[i] = model.w[i] - step * grad[i];
            f_new = logistic_objective(features, labels, n_classes, model.dim, cfg.l2, trial, nullptr);
            if (f_new <= f - 1e-4 * step * gnorm2 || step < 1e-16) break;
            step *= 0.5;
        }
        if (step < 1e-16) break;  // no descent progress left
        model.w = std::move(trial);
        f = logistic_objective(features, labels, n_classes, model.dim, cfg.l2, model.w, &grad);
    }
    return model;
}

namespace {

int count_classes(const std::vector<int>& labels) {
    int n = 0;
    for (int v : labels) {
        if (v < 0) throw config_error("eval: dataset contains unlabeled windows");
        n = std::max(n, v + 1);
    }
    return n;
}

}  // namespace

MetricReport linear_probe(const std::vector<std::vector<real>>& features,
                          const std::vector<int>& labels,
                          const std::vector<std::string>& patients, const FoldPlan& plan,
                          const ProbeConfig& cfg) {
    if (features.size() != labels.size() || features.size() != patients.size())
        throw config_error("probe: features, labels and patients must align");
    const int n_classes = count_classes(labels);

    MetricReport report;
    for (size_t f = 0; f < plan.folds.size(); ++f) {
        const auto& fold = plan.folds[f];
        std::set<std::string> train_set(fold.train.begin(), fold.train.end());
        std::set<std::string> test_set(fold.test.begin(), fold.test.end());

        std::vector<std::vector<real>> x_train;
        std::vector<int> y_train;
        std::vector<size_t> test_rows;
        for (size_t i = 0; i < features.size(); ++i) {
            if (train_set.count(patients[i])) {
                x_train.push_back(features[i]);
                y_train.push_back(labels[i]);
            } else if (test_set.count(patients[i])) {
                test_rows.push_back(i);
            }
        }
        if (x_train.empty() || test_rows.empty()) {
            std::fprintf(stderr, "[probe] fold %zu skipped: empty train or test split\n", f);
            continue;
        }
        std::set<int> train_classes(y_train.begin(), y_train.end());
        if (train_classes.size() < 2) {
            std::fprintf(stderr, "[probe] fold %zu skipped: single-class training split\n", f);
            continue;
        }
        std::set<int> test_classes;
        for (size_t i : test_rows) test_classes.insert(labels[i]);
        if (test_classes.size() < 2) {
            std::fprintf(stderr, "[probe] fold %zu skipped: single-class test split\n", f);
            continue;
        }

        LogisticModel model = fit_logistic(x_train, y_train, n_classes, cfg);
        std::vector<int> y_test;
        std::vector<std::vector<double>> scores;
        for (size_t i : test_rows) {
            y_test.push_back(labels[i]);
            scores.push_back(model.predict_proba(features[i].data()));
        }
        FoldMetrics fm;
        fm.fold = static_cast<int>(f);
        fm.metrics = compute_metrics(y_test, scores);
        fm.n_test = static_cast<int64_t>(test_rows.size());
        report.folds.push_back(fm);
    }
    if (report.folds.empty()) throw config_error("probe: every fold was skipped");
    report.finalize();
    return report;
}

// ----------------------------- fine-tuning -----------------------------

bool EarlyStopper::should_stop(double val_loss, int epoch) {
    if (val_loss < best_) {
        best_ = val_loss;
        best_epoch_ = epoch;
        since_best_ = 0;
    } else {
        ++since_best_;
    }
    return since_best_ >= patience_;
}

namespace {

struct HeadParams {
    Tensor w, b;
};

Tensor head_logits(const ModelParams& enc, const HeadParams& head,
                   const std::vector<const EcgWindow*>& windows) {
    Tensor feats = represent_batch(enc, windows);  // (B, d)
    return add(matmul(feats, head.w), head.b);
}

double dataset_ce(const ModelParams& enc, const HeadParams& head,
                  const std::vector<const EcgWindow*>& windows, const std::vector<int32_t>& labels,
                  int batch_size) {
    double total = 0;
    int64_t n = 0;
    for (size_t at = 0; at < windows.size(); at += static_cast<size_t>(batch_size)) {
        const size_t hi = std::min(windows.size(), at + static_cast<size_t>(batch_size));
        std::vector<const EcgWindow*> chunk(windows.begin() + at, windows.begin() + hi);
        std::vector<int32_t> chunk_labels(labels.begin() + at, labels.begin() + hi);
        Tensor loss = cross_entropy_logits(head_logits(enc, head, chunk), chunk_labels);
        total += double(loss.item()) * double(hi - at);
        n += static_cast<int64_t>(hi - at);
    }
    return total / double(n);
}

}  // namespace

MetricReport fine_tune(const ModelParams& pretrained, const std::vector<EcgWindow>& data,
                       const FoldPlan& plan, const FineTuneConfig& cfg) {
    const int n_classes = count_classes([&] {
        std::vector<int> l;
        for (const auto& w : data) l.push_back(w.label);
        return l;
    }());

    MetricReport report;
    for (size_t f = 0; f < plan.folds.size(); ++f) {
        const auto& fold = plan.folds[f];
        std::set<std::string> train_set(fold.train.begin(), fold.train.end());
        std::set<std::string> val_set(fold.val.begin(), fold.val.end());
        std::set<std::string> test_set(fold.test.begin(), fold.test.end());

        std::vector<const EcgWindow*> train_w, val_w, test_w;
        std::vector<int32_t> train_y, val_y;
        std::vector<int> test_y;
        for (const auto& w : data) {
            if (train_set.count(w.patient_id)) {
                train_w.push_back(&w);
                train_y.push_back(w.label);
            } else if (val_set.count(w.patient_id)) {
                val_w.push_back(&w);
                val_y.push_back(w.label);
            } else if (test_set.count(w.patient_id)) {
                test_w.push_back(&w);
                test_y.push_back(w.label);
            }
        }
        if (val_w.empty())
            throw config_error("fine_tune: fold " + std::to_string(f) + " has an empty validation split");
        if (train_w.empty() || test_w.empty()) {
            std::fprintf(stderr, "[fine_tune] fold %zu skipped: empty train or test split\n", f);
            continue;
        }
        if (std::set<int>(test_y.begin(), test_y.end()).size() < 2) {
            std::fprintf(stderr, "[fine_tune] fold %zu skipped: single-class test split\n", f);
            continue;
        }

        ModelParams enc = pretrained.clone();
        enc.set_requires_grad(true);
        HeadParams head;
        head.w = Tensor::zeros({enc.config.d_model, n_classes});
        head.w.set_requires_grad();
        head.b = Tensor::zeros({n_classes});
        head.b.set_requires_grad();

        NamedTensors trainable = enc.named();
        std::vector<double> lr_scales(trainable.size(), cfg.encoder_lr_scale);
        trainable.emplace_back("clf.w", head.w);
        trainable.emplace_back("clf.b", head.b);
        lr_scales.push_back(1.0);
        lr_scales.push_back(1.0);

        AdamWState opt;
        adamw_init(opt, trainable);
        AdamWConfig ocfg;
        ocfg.lr = cfg.lr;
        ocfg.weight_decay = 0.0;  // plain Adam for fine-tuning

        Rng rng(cfg.seed + f);
        EarlyStopper stopper(cfg.patience);
        ModelParams best_enc = enc.clone();
        std::vector<real> best_head_w = head.w.values(), best_head_b = head.b.values();

        std::vector<size_t> order(train_w.size());
        std::iota(order.begin(), order.end(), size_t(0));

        for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
            for (size_t i = order.size(); i > 1; --i) {
                const size_t j = static_cast<size_t>(rng.bounded(i));
                std::swap(order[i - 1], order[j]);
            }
            for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
                const size_t hi = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
                std::vector<const EcgWindow*> chunk;
                std::vector<int32_t> chunk_labels;
                for (size_t i = at; i < hi; ++i) {
                    chunk.push_back(train_w[order[i]]);
                    chunk_labels.push_back(train_y[order[i]]);
                }
                Tape tape;
                Tensor loss = cross_entropy_logits(head_logits(enc, head, chunk), chunk_labels);
                for (auto&& [name, t] : trainable) t.zero_grad();
                tape.backward(loss);
                adamw_step(trainable, opt, ocfg, &lr_scales);
            }
            const double val_loss = dataset_ce(enc, head, val_w, val_y, cfg.batch_size);
            const bool improved = val_loss < stopper.best_loss();
            const bool stop = stopper.should_stop(val_loss, epoch);
            if (improved) {
                best_enc = enc.clone();
                best_head_w = head.w.values();
                best_head_b = head.b.values();
            }
            std::fprintf(stderr, "[fine_tune] fold %zu epoch %d val %.6f%s\n", f, epoch, val_loss,
                         improved ? " *" : "");
            if (stop) break;
        }

        // best-validation weights score the test split
        head.w.values() = best_head_w;
        head.b.values() = best_head_b;
        std::vector<std::vector<double>> scores;
        for (const EcgWindow* w : test_w) {
            Tensor logits = head_logits(best_enc, head, {w});
            LogisticModel tmp;  // reuse the stable softmax
            tmp.n_classes = n_classes;
            tmp.dim = 0;
            std::vector<double> z(static_cast<size_t>(n_classes));
            for (int c = 0; c < n_classes; ++c) z[static_cast<size_t>(c)] = double(logits.data()[c]);
            const double mx = *std::max_element(z.begin(), z.end());
            double denom = 0;
            for (double& v : z) {
                v = std::exp(v - mx);
                denom += v;
            }
            for (double& v : z) v /= denom;
            scores.push_back(std::move(z));
        }
        FoldMetrics fm;
        fm.fold = static_cast<int>(f);
        fm.metrics = compute_metrics(test_y, scores);
        fm.n_test = static_cast<int64_t>(test_w.size());
        report.folds.push_back(fm);
    }
    if (report.folds.empty()) throw config_error("fine_tune: every fold was skipped");
    report.finalize();
    return report;
}

// ----------------------------- reconstruction analyses -----------------------------

std::vector<double> masked_l1_per_window(const ModelParams& params,
                                         const std::vector<EcgWindow>& windows,
                                         const std::vector<MaskSpec>& masks) {
    if (windows.size() != masks.size())
        throw config_error("masked_l1_per_window: window/mask count mismatch");
    const bool needs_spec = params.config.variant == Variant::cupid && params.config.dec_blocks > 1;
    SpectrogramTransform spec(params.config.spectrogram_config());

    std::vector<double> out(windows.size(), 0.0);
    constexpr size_t kChunk = 64;
    for (size_t at = 0; at < windows.size(); at += kChunk) {
        const size_t hi = std::min(windows.size(), at + kChunk);
        std::vector<const EcgWindow*> chunk;
        std::vector<MaskSpec> chunk_masks;
        for (size_t i = at; i < hi; ++i) {
            chunk.push_back(&windows[i]);
            chunk_masks.push_back(masks[i]);
        }
        Batch batch = make_batch(chunk, params.config, needs_spec ? &spec : nullptr,
                                 std::move(chunk_masks));
        Tensor h;
        if (batch.visible_count() > 0) {
            h = assemble_decoder_input(params, run_encoder(params, embed_visible(params, batch)),
                                       batch);
        } else {
            h = assemble_decoder_input(params, Tensor(), batch);
        }
        Tensor s_proj;
        if (needs_spec) s_proj = project_frames(params, batch.spec_frames);
        Tensor recon = decode(params, h, s_proj);

        // per-window masked mean absolute error, plain loops
        const int64_t n = batch.n_patches();
        const int64_t p = params.config.patch_size;
        for (size_t i = at; i < hi; ++i) {
            const int64_t s = static_cast<int64_t>(i - at);
            const auto& m = batch.masks[static_cast<size_t>(s)];
            double acc = 0;
            for (int32_t patch : m.masked_idx) {
                double mae = 0;
                const real* tgt = batch.patches.data() + (s * n + patch) * p;
                const real* rec = recon.data() + (s * n + patch) * p;
                for (int64_t j = 0; j < p; ++j) mae += std::fabs(double(rec[j]) - double(tgt[j]));
                acc += mae / double(p);
            }
            out[i] = acc / double(m.count());
        }
    }
    return out;
}

std::vector<SdnnBinRow> sdnn_stratified_error(const ModelParams& mtae_params,
                                              const ModelParams& cupid_params,
                                              const std::vector<EcgWindow>& windows,
                                              const std::vector<double>& bin_edges,
                                              uint64_t seed) {
    if (bin_edges.size() < 2) throw config_error("sdnn report: need at least two bin edges");
    for (size_t i = 1; i < bin_edges.size(); ++i)
        if (!(bin_edges[i] > bin_edges[i - 1]))
            throw config_error("sdnn report: bin edges must increase");
    if (mtae_params.config.window_samples != cupid_params.config.window_samples ||
        mtae_params.config.patch_size != cupid_params.config.patch_size ||
        mtae_params.config.mask_ratio != cupid_params.config.mask_ratio)
        throw config_error("sdnn report: the two checkpoints disagree on window/patch/mask config");

    // one mask per window, shared across the two variants
    Rng rng(seed);
    const int n_patches = cupid_params.config.n_patches();
    std::vector<MaskSpec> masks;
    std::vector<EcgWindow> usable;
    for (const auto& w : windows) {
        if (!w.has_sdnn()) continue;
        usable.push_back(w);
        masks.push_back(random_mask(n_patches, cupid_params.config.mask_ratio, rng));
    }

    const auto mtae_losses = masked_l1_per_window(mtae_params, usable, masks);
    const auto cupid_losses = masked_l1_per_window(cupid_params, usable, masks);

    std::vector<SdnnBinRow> rows(bin_edges.size() - 1);
    for (size_t b = 0; b + 1 < bin_edges.size(); ++b) {
        rows[b].lo = bin_edges[b];
        rows[b].hi = bin_edges[b + 1];
    }
    for (size_t i = 0; i < usable.size(); ++i) {
        const double s = usable[i].sdnn_ms;
        for (auto& row : rows) {
            if (s >= row.lo && s < row.hi) {
                row.count += 1;
                row.mtae_loss += mtae_losses[i];
                row.cupid_loss += cupid_losses[i];
                break;
            }
        }
    }
    for (auto& row : rows) {
        if (row.count > 0) {
            row.mtae_loss /= double(row.count);
            row.cupid_loss /= double(row.count);
        }
    }
    return rows;
}

// ----------------------------- ablation sweep -----------------------------

std::vector<std::vector<real>> extract_features(const ModelParams& params,
                                                const std::vector<EcgWindow>& windows) {
    std::vector<std::vector<real>> feats;
    feats.reserve(windows.size());
    constexpr size_t kChunk = 64;
    for (size_t at = 0; at < windows.size(); at += kChunk) {
        const size_t hi = std::min(windows.size(), at + kChunk);
        std::vector<const EcgWindow*> chunk;
        for (size_t i = at; i < hi; ++i) chunk.push_back(&windows[i]);
        Tensor r = represent_batch(params, chunk);  // (B, d)
        const int64_t d = r.extent(1);
        for (size_t i = 0; i < chunk.size(); ++i) {
            std::vector<real> row(static_cast<size_t>(d));
            std::copy(r.data() + static_cast<int64_t>(i) * d,
                      r.data() + static_cast<int64_t>(i + 1) * d, row.begin());
            feats.push_back(std::move(row));
        }
    }
    return feats;
}

std::vector<SweepRow> sweep(const std::vector<EcgWindow>& data, const ModelConfig& base_model,
                            const TrainConfig& base_train, const std::vector<SweepCell>& grid,
                            const std::string& work_dir) {
    std::vector<SweepRow> rows;
    std::vector<std::string> patients;
    std::vector<int> labels;
    for (const auto& w : data) {
        patients.push_back(w.patient_id);
        labels.push_back(w.label);
    }
    const FoldPlan plan = FoldPlan::make(patients, 5, base_train.seed);

    for (size_t cell_i = 0; cell_i < grid.size(); ++cell_i) {
        const SweepCell& cell = grid[cell_i];
        SweepRow row;
        row.cell = cell;
        if (cell.patch_size <= 0 || base_model.window_samples % cell.patch_size != 0) {
            row.skipped = true;
            row.skip_reason = "patch size " + std::to_string(cell.patch_size) +
                              " does not divide window length " +
                              std::to_string(base_model.window_samples);
            rows.push_back(row);
            continue;
        }
        for (Variant variant : {Variant::mtae, Variant::cupid}) {
            ModelConfig mc = base_model;
            mc.patch_size = cell.patch_size;
            mc.mask_ratio = cell.mask_ratio;
            if (cell.enc_blocks > 0) mc.enc_blocks = cell.enc_blocks;
            mc.variant = variant;
            TrainConfig tc = base_train;
            if (cell.iterations > 0) tc.iterations = cell.iterations;

            const std::string run_dir = work_dir + "/cell" + std::to_string(cell_i) + "_" +
                                        variant_name(variant);
            TrainResult tr = train(data, mc, tc, run_dir);
            Checkpoint ck = load_checkpoint(tr.final_checkpoint);
            const auto feats = extract_features(ck.params, data);
            const MetricReport rep = linear_probe(feats, labels, patients, plan);
            (variant == Variant::mtae ? row.mtae_acc : row.cupid_acc) = rep.acc_mean;
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace cupid
