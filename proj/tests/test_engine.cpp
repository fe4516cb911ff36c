// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "msvit/engine.hpp"
#include "msvit/errors.hpp"
#include "support.hpp"

using namespace msvit;
namespace fs = std::filesystem;

namespace {

RunConfig small_run() {
    RunConfig c;
    c.model.backbone = BackboneConfig{2, 16, 2, 2, 4};
    c.model.gate.hidden = 8;
    c.train.epochs = 1;
    c.train.batch_size = 4;
    c.train.warmup_epochs = 0.0;
    c.train.gate_warmup_epochs = 0.0;
    c.data.n_train = 8;
    c.data.n_eval = 8;
    return c;
}

Dataset small_data(std::size_t n, std::uint64_t seed = 1) {
    return gen_clutter_dataset(seed, n, 4, ScaleConfig{});
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("total loss") {
    CHECK(total_loss_value(2.0, 0.5, 4.0) == 4.0);
    CHECK(total_loss_value(1.25, 9.0, 0.0) == 1.25);
    auto task = ad::constant(Tensor::scalar(2.0));
    auto gate = ad::constant(Tensor::scalar(0.5));
    CHECK(total_loss(task, gate, 4.0)->value.item() == 4.0);
    CHECK(total_loss(task, gate, 0.0)->value.item() == 2.0);
    CHECK_THROWS_AS(total_loss(ad::constant(Tensor(Shape{2}, 1.0)), gate, 1.0), std::invalid_argument);
}

TEST_CASE("gate gradient of the total loss is the sum of its addends") {
    RunConfig c = small_run();
    Model m(c.model, 3);
    const Dataset d = small_data(4);
    std::vector<Tensor> imgs;
    std::vector<int> labels;
    for (const auto& s : d.samples) imgs.push_back(s.image), labels.push_back(s.label);
    ForwardOptions fo;
    fo.stochastic = true;
    fo.noise_seed = 2;
    const auto fr = m.forward(imgs, fo);
    const double lambda = 4.0;
    const auto vars = fr.binding.vars();
    const auto g_total = ad::grad(total_loss(ad::cross_entropy(fr.logits, labels), m.gate_loss(fr), lambda), vars);
    const auto g_task = ad::grad(ad::cross_entropy(fr.logits, labels), vars);
    const auto g_gate = ad::grad(m.gate_loss(fr), vars);
    for (std::size_t p = 0; p < vars.size(); ++p) {
        if (m.params().all()[p].group == ParamGroup::backbone) continue;
        for (std::size_t e = 0; e < g_total[p].size(); ++e) {
            const double want = g_task[p][e] + lambda * g_gate[p][e];
            CHECK(std::abs(g_total[p][e] - want) <= 1e-12 * std::max(1.0, std::abs(want)));
        }
    }
}

TEST_CASE("learning-rate schedules") {
    CHECK(cosine_factor(0, 100) == 1.0);
    CHECK(cosine_factor(50, 100) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(cosine_factor(100, 100) == doctest::Approx(0.0));
    CHECK(cosine_factor(25, 100) > cosine_factor(26, 100));
    CHECK(warmup_factor(0, 0.0) == 1.0);
    CHECK(warmup_factor(0, 4.0) == 0.25);
    CHECK(warmup_factor(3, 4.0) == 1.0);
    CHECK(warmup_factor(10, 4.0) == 1.0);
    // The gate warms up more slowly than the backbone.
    CHECK(warmup_factor(5, 6.0 * 10) < warmup_factor(5, 0.5 * 10));
}

TEST_CASE("training is deterministic") {
    RunConfig c = small_run();
    const Dataset d = small_data(8);
    Model a(c.model, 11), b(c.model, 11);
    const auto ra = train(a, d, c);
    const auto rb = train(b, d, c);
    REQUIRE(ra.history.size() == 1);
    CHECK(ra.history[0].task_loss == rb.history[0].task_loss);
    CHECK(ra.history[0].gate_loss == rb.history[0].gate_loss);
    for (std::size_t p = 0; p < a.params().size(); ++p) {
        const auto& x = a.params().all()[p].value;
        const auto& y = b.params().all()[p].value;
        CHECK(std::memcmp(x.ptr(), y.ptr(), x.size() * sizeof(double)) == 0);
    }
    // A different seed changes the noise and the data order.
    RunConfig c2 = c;
    c2.train.seed = 1;
    Model e(c.model, 11);
    train(e, d, c2);
    CHECK_FALSE(e.params().get("gate.fc4.bias").value == a.params().get("gate.fc4.bias").value);
}

TEST_CASE("without sparsity pressure the gate stays all-fine") {
    RunConfig c = small_run();
    c.model.loss.lambda = 0.0;
    c.train.epochs = 2;
    const Dataset d = small_data(16);
    Model m(c.model, 5);
    const auto r = train(m, d, c);
    CHECK(r.final_eval.mean_m > 0.99);
    CHECK(r.final_eval.mean_active_tokens == doctest::Approx(1.0 + 64.0));
}

TEST_CASE("all-fine with lambda 0 reproduces the plain ViT") {
    RunConfig c = small_run();
    c.model.loss.lambda = 0.0;
    c.train.epochs = 2;
    const Dataset d = small_data(12);
    c.train.gate_mode = GateMode::parse("all-fine");
    Model mixed(c.model, 9);
    const auto rm = train(mixed, d, c);
    c.train.gate_mode = GateMode::parse("none");
    Model plain(c.model, 9);
    const auto rp = train(plain, d, c);
    REQUIRE(rm.history.size() == rp.history.size());
    for (std::size_t e = 0; e < rm.history.size(); ++e) {
        CHECK(std::abs(rm.history[e].task_loss - rp.history[e].task_loss) < 1e-9);
        CHECK(rm.history[e].accuracy == rp.history[e].accuracy);
    }
    for (std::size_t p = 0; p < plain.params().size(); ++p) {
        if (plain.params().all()[p].group != ParamGroup::backbone) continue;
        const auto& x = plain.params().all()[p].value;
        const auto& y = mixed.params().all()[p].value;
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - y[i]) < 1e-9);
    }
}

TEST_CASE("evaluation reports") {
    RunConfig c = small_run();
    const Dataset d = small_data(10);
    Model m(c.model, 2);
    const auto fresh = evaluate(m, d, GateMode{});
    CHECK(fresh.mean_active_tokens == doctest::Approx(65.0));
    CHECK(fresh.images == 10);
    CHECK(fresh.has_foreground);

    const auto coarse = evaluate(m, d, GateMode::parse("all-coarse"));
    CHECK(coarse.mean_active_tokens == 17.0);
    CHECK(coarse.mean_m == 0.0);
    for (double f : coarse.frequency) CHECK(f == 0.0);

    const auto fine = evaluate(m, d, GateMode::parse("all-fine"));
    CHECK(fine.mean_active_tokens == 65.0);
    CHECK(fine.mean_macs > coarse.mean_macs);
    for (const auto& dec : fine.decisions)
        for (double v : dec) CHECK(v == 1.0);

    // Evaluation is noise-free and repeatable.
    const auto again = evaluate(m, d, GateMode{});
    CHECK(again.mean_m == fresh.mean_m);
    CHECK(again.accuracy == fresh.accuracy);

    const auto js = fresh.to_json(4);
    CHECK(js.find("\"foreground_m\"") != std::string::npos);
    CHECK(js.find("\"frequency_grid\"") != std::string::npos);
}

TEST_CASE("run directory artefacts") {
    RunConfig c = small_run();
    c.train.epochs = 2;
    c.train.gate_warmup_epochs = 1.0;
    const auto dir = msvit::test::scratch_dir("engine_run");
    const Dataset d = small_data(8);
    Model m(c.model, 4);
    TrainOptions o;
    o.run_dir = dir / "r";
    std::vector<std::string> lines;
    o.log = [&](const std::string& s) { lines.push_back(s); };
    train(m, d, c, o);
    CHECK(lines.size() == 2);
    CHECK(fs::exists(dir / "r" / "checkpoint.bin"));
    CHECK(parse_run_config(slurp(dir / "r" / "config.json")).train.epochs == 2);

    const std::string csv = slurp(dir / "r" / "metrics.csv");
    CHECK(csv.find("# loss=gbas\n") != std::string::npos);
    CHECK(csv.find("# g_star=0.25\n") != std::string::npos);
    CHECK(csv.find("# lambda=4\n") != std::string::npos);
    CHECK(csv.find("epoch,task_loss,gate_loss,mean_m,mean_active_tokens,mean_macs,accuracy\n") !=
          std::string::npos);
    std::size_t rows = 0;
    std::istringstream is(csv);
    for (std::string line; std::getline(is, line);)
        if (!line.empty() && std::isdigit(static_cast<unsigned char>(line[0]))) ++rows;
    CHECK(rows == 2);

    auto [loaded, cfg] = Model::load(dir / "r" / "checkpoint.bin");
    CHECK(cfg.train.epochs == 2);
    CHECK(loaded.params().get("head.bias").value == m.params().get("head.bias").value);
}

TEST_CASE("a non-finite loss names the epoch and batch") {
    RunConfig c = small_run();
    const Dataset d = small_data(8);
    Model m(c.model, 4);
    m.params().get("head.weight").value.fill(1e308);
    try {
        train(m, d, c);
        FAIL("expected a NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 1 batch 0") != std::string::npos);
    }
}

TEST_CASE("dataset selection from the config") {
    RunConfig c = small_run();
    auto [tr, ev] = datasets_from_config(c);
    CHECK(tr.size() == 8);
    CHECK(ev.size() == 8);
    // Distinct splits.
    CHECK_FALSE(tr.samples[0].image == ev.samples[0].image);

    c.data.source = "manifest";
    c.data.train_manifest = "/nonexistent/msvit/train";
    try {
        datasets_from_config(c);
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("/nonexistent/msvit/train") != std::string::npos);
    }
}

TEST_CASE("cost sources") {
    const ModelConfig mc;
    const auto fine = cost_for_source(mc, "all-fine", nullptr, nullptr);
    const auto coarse = cost_for_source(mc, "all-coarse", nullptr, nullptr);
    const auto plain = cost_for_source(mc, "plain", nullptr, nullptr);
    CHECK(coarse.mean.total() < fine.mean.total());
    CHECK(plain.mean.total() < fine.mean.total());  // no gate
    CHECK(plain.mean.gate == 0.0);
    CHECK(fine.mean.gate > 0.0);
    CHECK(coarse.mean_active_tokens == 17.0);
    CHECK_THROWS(cost_for_source(mc, "learned", nullptr, nullptr));
    CHECK_THROWS_AS(cost_for_source(mc, "sideways", nullptr, nullptr), ConfigError);
}
