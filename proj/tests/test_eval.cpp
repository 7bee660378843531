#include <cmath>
#include <numeric>
#include <set>

#include "cupid/eval.hpp"
#include "cupid/rng.hpp"
#include "cupid/synth.hpp"
#include "doctest.h"

using namespace cupid;

namespace {

// brute-force O(n^2) pairwise AUC with half credit for ties
double pairwise_auc_oracle(const std::vector<int>& y, const std::vector<double>& s, int positive) {
    double num = 0;
    int64_t pairs = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        if (y[i] != positive) continue;
        for (size_t j = 0; j < y.size(); ++j) {
            if (y[j] == positive) continue;
            ++pairs;
            if (s[i] > s[j])
                num += 1.0;
            else if (s[i] == s[j])
                num += 0.5;
        }
    }
    return num / double(pairs);
}

std::vector<std::vector<real>> blob_features(int n_per_class, double sep, Rng& rng,
                                             std::vector<int>* labels,
                                             std::vector<std::string>* patients) {
    std::vector<std::vector<real>> out;
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < n_per_class; ++i) {
            std::vector<real> x(8);
            for (auto& v : x) v = static_cast<real>(rng.gaussian());
            x[0] += static_cast<real>(c == 0 ? -sep : sep);
            out.push_back(std::move(x));
            labels->push_back(c);
            patients->push_back("c" + std::to_string(c) + "p" + std::to_string(i / 5));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("fold plans are patient-disjoint with ~60/20/20 proportions") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 5 + int(rng.bounded(200));
        std::vector<std::string> patients;
        for (int i = 0; i < n; ++i) patients.push_back("pat" + std::to_string(i));
        const FoldPlan plan = FoldPlan::make(patients, 5, rng.next_u64());
        plan.verify_disjoint();
        REQUIRE(plan.folds.size() == 5);
        for (const auto& f : plan.folds) {
            CHECK(f.train.size() + f.val.size() + f.test.size() == size_t(n));
            // proportions within 2 patients of the target chunking
            CHECK(std::fabs(double(f.test.size()) - 0.2 * n) <= 2.0);
            CHECK(std::fabs(double(f.val.size()) - 0.2 * n) <= 2.0);
        }
        // every patient serves as test exactly once across folds
        std::set<std::string> tested;
        for (const auto& f : plan.folds)
            for (const auto& p : f.test) {
                CHECK(!tested.count(p));
                tested.insert(p);
            }
        CHECK(tested.size() == size_t(n));
    }
    CHECK_THROWS_AS(FoldPlan::make({"a", "b", "c"}, 5, 1), config_error);
}

TEST_CASE("fixed split files build a single disjoint fold") {
    const std::string text =
        "# physionet-style recommended split\n"
        "a1,train\na2,train\na3,train\na4,train\nb1,test\nb2,test\n";
    const FoldPlan plan = FoldPlan::from_split_file(text, 0.25, 3);
    REQUIRE(plan.folds.size() == 1);
    const auto& f = plan.folds[0];
    CHECK(f.test == std::vector<std::string>{"b1", "b2"});
    CHECK(f.val.size() == 1);  // round(0.25 * 4)
    CHECK(f.train.size() == 3);
    plan.verify_disjoint();

    CHECK_THROWS_AS(FoldPlan::from_split_file("a,other\n", 0.25, 1), parse_error);
    CHECK_THROWS_AS(FoldPlan::from_split_file("a,train\n", 0.25, 1), config_error);
}

TEST_CASE("metrics: worked AUC example and perfect predictions") {
    // truth [1,0,1,0], class-1 scores [0.9,0.8,0.7,0.1]: 3 of 4 pairs concordant
    const std::vector<int> y = {1, 0, 1, 0};
    const std::vector<double> s1 = {0.9, 0.8, 0.7, 0.1};
    CHECK(rank_auc(y, s1, 1) == doctest::Approx(0.75).epsilon(1e-12));

    std::vector<std::vector<double>> scores;
    for (double v : s1) scores.push_back({1.0 - v, v});
    const Metrics m = compute_metrics(y, scores);
    CHECK(m.macro_auc == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(m.accuracy == doctest::Approx(0.75));

    // perfect predictions
    std::vector<std::vector<double>> perfect = {{0.1, 0.9}, {0.8, 0.2}, {0.3, 0.7}, {0.9, 0.1}};
    const Metrics mp = compute_metrics(y, perfect);
    CHECK(mp.accuracy == 1.0);
    CHECK(mp.macro_f1 == 1.0);
    CHECK(mp.macro_auc == 1.0);
}

TEST_CASE("metrics: argmax invariance under score rescaling") {
    Rng rng(9);
    std::vector<int> y;
    std::vector<std::vector<double>> scores;
    for (int i = 0; i < 60; ++i) {
        y.push_back(int(rng.bounded(3)));
        std::vector<double> row = {rng.uniform(), rng.uniform(), rng.uniform()};
        double denom = row[0] + row[1] + row[2];
        for (double& v : row) v /= denom;
        scores.push_back(row);
    }
    const Metrics a = compute_metrics(y, scores);
    auto doubled = scores;
    for (auto& row : doubled) {
        for (double& v : row) v *= 2.0;
        const double denom = row[0] + row[1] + row[2];
        for (double& v : row) v /= denom;
    }
    const Metrics b = compute_metrics(y, doubled);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.macro_f1 == b.macro_f1);
}

TEST_CASE("rank AUC agrees with the quadratic pairwise oracle, ties included") {
    Rng rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 10 + int(rng.bounded(190));
        std::vector<int> y(static_cast<size_t>(n));
        std::vector<double> s(static_cast<size_t>(n));
        bool has_pos = false, has_neg = false;
        for (int i = 0; i < n; ++i) {
            y[size_t(i)] = int(rng.bounded(2));
            (y[size_t(i)] ? has_pos : has_neg) = true;
            // quantized scores force plenty of ties
            s[size_t(i)] = double(rng.bounded(12)) / 11.0;
        }
        if (!has_pos || !has_neg) continue;
        CHECK(std::fabs(rank_auc(y, s, 1) - pairwise_auc_oracle(y, s, 1)) < 1e-12);
    }
}

TEST_CASE("probe separates Gaussian blobs perfectly") {
    Rng rng(33);
    std::vector<int> labels;
    std::vector<std::string> patients;
    const auto features = blob_features(50, 6.0, rng, &labels, &patients);
    const FoldPlan plan = FoldPlan::make(patients, 5, 3);
    const MetricReport rep = linear_probe(features, labels, patients, plan);
    CHECK(rep.acc_mean == doctest::Approx(1.0));
    CHECK(rep.auc_mean == doctest::Approx(1.0));
}

TEST_CASE("probe on shuffled labels lands at the majority-class rate") {
    Rng rng(41);
    std::vector<int> labels;
    std::vector<std::string> patients;
    auto features = blob_features(100, 6.0, rng, &labels, &patients);
    // shuffle labels: features carry no class signal anymore
    for (size_t i = labels.size(); i > 1; --i)
        std::swap(labels[i - 1], labels[rng.bounded(i)]);
    const FoldPlan plan = FoldPlan::make(patients, 5, 7);
    const MetricReport rep = linear_probe(features, labels, patients, plan);
    CHECK(std::fabs(rep.acc_mean - 0.5) < 0.12);  // balanced classes, null model
}

TEST_CASE("constant features predict the majority class exactly") {
    std::vector<std::vector<real>> features(30, std::vector<real>(4, real(1)));
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) labels.push_back(i < 20 ? 0 : 1);  // majority class 0
    LogisticModel model = fit_logistic(features, labels, 2);
    int correct = 0;
    for (size_t i = 0; i < features.size(); ++i)
        if (model.predict(features[i].data()) == labels[i]) ++correct;
    CHECK(double(correct) / 30.0 == doctest::Approx(20.0 / 30.0));
}

TEST_CASE("early stopping reproduces the worked patience-5 trace") {
    const std::vector<double> val = {1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95};
    EarlyStopper stop(5);
    int stopped_epoch = -1;
    for (size_t e = 0; e < val.size(); ++e) {
        if (stop.should_stop(val[e], int(e + 1))) {
            stopped_epoch = int(e + 1);
            break;
        }
    }
    CHECK(stopped_epoch == 7);
    CHECK(stop.best_epoch() == 2);
    CHECK(stop.best_loss() == doctest::Approx(0.9));
}

TEST_CASE("sdnn report bins partition the dataset") {
    ModelConfig mc;
    mc.window_samples = 1000;
    mc.patch_size = 20;
    mc.d_model = 16;
    mc.enc_blocks = 1;
    mc.enc_heads = 4;
    mc.dec_blocks = 2;
    mc.dec_heads = 4;
    Rng rng(3);
    mc.variant = Variant::mtae;
    ModelParams mtae_p = ModelParams::init(mc, rng);
    ModelConfig cc = mc;
    cc.variant = Variant::cupid;
    Rng rng2(3);
    ModelParams cupid_p = ModelParams::init(cc, rng2);

    SynthConfig s1;
    s1.n_windows = 12;
    s1.sdnn_ms = 0;
    s1.seed = 1;
    SynthConfig s2 = s1;
    s2.sdnn_ms = 80;
    s2.seed = 2;
    s2.patient_prefix = "s2";
    const auto windows = generate_mixed({s1, s2});

    const std::vector<double> edges = {0, 50, 100, std::numeric_limits<double>::infinity()};
    const auto rows = sdnn_stratified_error(mtae_p, cupid_p, windows, edges, 7);
    REQUIRE(rows.size() == 3);
    int64_t total = 0;
    for (const auto& r : rows) {
        total += r.count;
        if (r.count > 0) {
            CHECK(std::isfinite(r.mtae_loss));
            CHECK(std::isfinite(r.cupid_loss));
        }
    }
    int64_t with_sdnn = 0;
    for (const auto& w : windows)
        if (w.has_sdnn()) ++with_sdnn;
    CHECK(total == with_sdnn);

    // all-zero-SDNN corpus populates a single bin
    const auto zero_only = generate(s1);
    const auto rows0 = sdnn_stratified_error(mtae_p, cupid_p, zero_only, edges, 7);
    CHECK(rows0[0].count == int64_t(zero_only.size()));
    CHECK(rows0[1].count == 0);
    CHECK(rows0[2].count == 0);
}

TEST_CASE("fine-tune with encoder_lr_scale 0 equals head-only training on frozen features") {
    // tiny pretrained encoder
    ModelConfig mc;
    mc.window_samples = 1000;
    mc.patch_size = 20;
    mc.d_model = 16;
    mc.enc_blocks = 1;
    mc.enc_heads = 4;
    mc.dec_blocks = 1;
    mc.dec_heads = 4;
    mc.variant = Variant::mtae;
    Rng rng(5);
    ModelParams enc = ModelParams::init(mc, rng);

    SynthConfig a;
    a.n_windows = 30;
    a.windows_per_patient = 3;
    a.seed = 2;
    SynthConfig b = a;
    b.preset = Morphology::af_like;
    b.seed = 3;
    b.patient_prefix = "b";
    const auto data = generate_mixed({a, b});

    std::vector<std::string> patients;
    for (const auto& w : data) patients.push_back(w.patient_id);
    const FoldPlan plan = FoldPlan::make(patients, 3, 11);

    FineTuneConfig fc;
    fc.encoder_lr_scale = 0.0;
    fc.max_epochs = 4;
    fc.patience = 5;
    fc.batch_size = 8;
    fc.seed = 9;
    const MetricReport frozen = fine_tune(enc, data, plan, fc);

    // oracle: explicit head-only trainer over precomputed frozen features,
    // mirroring the schedule (shuffle stream, batches, early stop, restore)
    const auto feats_all = extract_features(enc, data);
    const int n_classes = 2;
    MetricReport manual;
    for (size_t f = 0; f < plan.folds.size(); ++f) {
        const auto& fold = plan.folds[f];
        std::set<std::string> train_set(fold.train.begin(), fold.train.end());
        std::set<std::string> val_set(fold.val.begin(), fold.val.end());
        std::set<std::string> test_set(fold.test.begin(), fold.test.end());
        std::vector<size_t> train_rows, val_rows, test_rows;
        for (size_t i = 0; i < data.size(); ++i) {
            if (train_set.count(data[i].patient_id)) train_rows.push_back(i);
            else if (val_set.count(data[i].patient_id)) val_rows.push_back(i);
            else if (test_set.count(data[i].patient_id)) test_rows.push_back(i);
        }
        std::set<int> test_classes;
        for (size_t i : test_rows) test_classes.insert(data[i].label);
        if (train_rows.empty() || test_rows.empty() || test_classes.size() < 2) continue;

        Tensor w = Tensor::zeros({mc.d_model, n_classes});
        w.set_requires_grad();
        Tensor bias = Tensor::zeros({n_classes});
        bias.set_requires_grad();
        NamedTensors params = {{"clf.w", w}, {"clf.b", bias}};
        AdamWState opt;
        adamw_init(opt, params);
        AdamWConfig ocfg;
        ocfg.lr = fc.lr;
        ocfg.weight_decay = 0.0;

        auto batch_features = [&](const std::vector<size_t>& rows, size_t at, size_t hi) {
            Tensor x = make_tensor({int64_t(hi - at), mc.d_model});
            for (size_t i = at; i < hi; ++i) {
                const auto& row = feats_all[rows[i]];
                std::copy(row.begin(), row.end(), x.data() + int64_t(i - at) * mc.d_model);
            }
            return x;
        };
        auto eval_ce = [&](const std::vector<size_t>& rows) {
            double total = 0;
            for (size_t at = 0; at < rows.size(); at += size_t(fc.batch_size)) {
                const size_t hi = std::min(rows.size(), at + size_t(fc.batch_size));
                Tensor x = batch_features(rows, at, hi);
                std::vector<int32_t> yb;
                for (size_t i = at; i < hi; ++i) yb.push_back(data[rows[i]].label);
                total += double(cross_entropy_logits(add(matmul(x, w), bias), yb).item()) *
                         double(hi - at);
            }
            return total / double(rows.size());
        };

        Rng order_rng(fc.seed + f);
        std::vector<size_t> order(train_rows.size());
        std::iota(order.begin(), order.end(), size_t(0));
        EarlyStopper stopper(fc.patience);
        std::vector<real> best_w = w.values(), best_b = bias.values();
        for (int epoch = 1; epoch <= fc.max_epochs; ++epoch) {
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[order_rng.bounded(i)]);
            for (size_t at = 0; at < order.size(); at += size_t(fc.batch_size)) {
                const size_t hi = std::min(order.size(), at + size_t(fc.batch_size));
                std::vector<size_t> rows;
                for (size_t i = at; i < hi; ++i) rows.push_back(train_rows[order[i]]);
                Tensor x = batch_features(rows, 0, rows.size());
                std::vector<int32_t> yb;
                for (size_t r : rows) yb.push_back(data[r].label);
                Tape tape;
                Tensor loss = cross_entropy_logits(add(matmul(x, w), bias), yb);
                w.zero_grad();
                bias.zero_grad();
                tape.backward(loss);
                adamw_step(params, opt, ocfg);
            }
            const double val_loss = eval_ce(val_rows);
            const bool improved = val_loss < stopper.best_loss();
            const bool stop = stopper.should_stop(val_loss, epoch);
            if (improved) {
                best_w = w.values();
                best_b = bias.values();
            }
            if (stop) break;
        }
        w.values() = best_w;
        bias.values() = best_b;

        std::vector<int> y_test;
        std::vector<std::vector<double>> scores;
        for (size_t i : test_rows) {
            y_test.push_back(data[i].label);
            Tensor x = batch_features({i}, 0, 1);
            Tensor logits = add(matmul(x, w), bias);
            std::vector<double> z = {double(logits.data()[0]), double(logits.data()[1])};
            const double mx = std::max(z[0], z[1]);
            const double d0 = std::exp(z[0] - mx), d1 = std::exp(z[1] - mx);
            scores.push_back({d0 / (d0 + d1), d1 / (d0 + d1)});
        }
        FoldMetrics fm;
        fm.fold = int(f);
        fm.metrics = compute_metrics(y_test, scores);
        fm.n_test = int64_t(test_rows.size());
        manual.folds.push_back(fm);
    }
    manual.finalize();

    REQUIRE(frozen.folds.size() == manual.folds.size());
    for (size_t i = 0; i < frozen.folds.size(); ++i) {
        CHECK(frozen.folds[i].metrics.accuracy ==
              doctest::Approx(manual.folds[i].metrics.accuracy).epsilon(1e-12));
        CHECK(frozen.folds[i].metrics.macro_f1 ==
              doctest::Approx(manual.folds[i].metrics.macro_f1).epsilon(1e-12));
        CHECK(frozen.folds[i].metrics.macro_auc ==
              doctest::Approx(manual.folds[i].metrics.macro_auc).epsilon(1e-12));
    }
}
