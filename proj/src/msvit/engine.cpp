// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "msvit/errors.hpp"
#include "msvit/rng.hpp"

namespace msvit {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<Tensor> batch_images(const Dataset& data, std::span<const std::size_t> idx) {
    std::vector<Tensor> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(data.samples[i].image);
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

struct Optimizer {
    const TrainConfig& cfg;
    std::vector<Tensor> m, v;
    std::size_t t = 0;

    Optimizer(const TrainConfig& c, const ParameterStore& store) : cfg(c) {
        for (const auto& p : store.all()) {
            m.emplace_back(p.value.shape(), 0.0);
            if (c.optimizer == OptimizerKind::adamw) v.emplace_back(p.value.shape(), 0.0);
        }
    }

    void step(ParameterStore& store, const std::vector<Tensor>& grads,
              const std::vector<double>& lrs) {
        ++t;
        const double b1 = cfg.momentum, b2 = cfg.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (std::size_t k = 0; k < grads.size(); ++k) {
            Tensor& p = store.all()[k].value;
            const Tensor& g = grads[k];
            const double lr = lrs[k];
            if (cfg.optimizer == OptimizerKind::sgd) {
                for (std::size_t i = 0; i < p.size(); ++i) {
                    const double gi = g[i] + cfg.weight_decay * p[i];
                    m[k][i] = cfg.momentum * m[k][i] + gi;
                    p[i] -= lr * m[k][i];
                }
            } else {
                for (std::size_t i = 0; i < p.size(); ++i) {
                    m[k][i] = b1 * m[k][i] + (1.0 - b1) * g[i];
                    v[k][i] = b2 * v[k][i] + (1.0 - b2) * g[i] * g[i];
                    const double mh = m[k][i] / c1, vh = v[k][i] / c2;
                    p[i] -= lr * (mh / (std::sqrt(vh) + 1e-8) + cfg.weight_decay * p[i]);
                }
            }
        }
    }
};

// Global-norm clipping applied to the backbone and to the gate + priors as
// two separate groups; the gate loss never touches backbone parameters.
void clip_by_group(std::vector<Tensor>& grads, const ParameterStore& store, double max_norm) {
    if (max_norm <= 0.0) return;
    for (const bool backbone : {true, false}) {
        double sq = 0.0;
        for (std::size_t k = 0; k < grads.size(); ++k) {
            if ((store.all()[k].group == ParamGroup::backbone) != backbone) continue;
            for (double x : grads[k].data()) sq += x * x;
        }
        const double norm = std::sqrt(sq);
        if (norm <= max_norm) continue;
        const double s = max_norm / norm;
        for (std::size_t k = 0; k < grads.size(); ++k) {
            if ((store.all()[k].group == ParamGroup::backbone) != backbone) continue;
            for (double& x : grads[k].data()) x *= s;
        }
    }
}

std::size_t argmax_row(const Tensor& logits, std::size_t r) {
    const std::size_t c = logits.dim(1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
        if (logits.at(r, j) > logits.at(r, best)) best = j;
    return best;
}

}  // namespace

double total_loss_value(double task, double gate, double lambda) { return task + lambda * gate; }

ad::Var total_loss(const ad::Var& task, const ad::Var& gate, double lambda) {
    if (task->value.size() != 1 || gate->value.size() != 1)
        throw std::invalid_argument("total_loss: losses must be scalars");
    if (lambda == 0.0) return task;
    return ad::add(task, ad::scale(gate, lambda));
}

double cosine_factor(std::size_t step, std::size_t total_steps) {
    if (total_steps == 0) return 1.0;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double warmup_factor(std::size_t step, double warmup_steps) {
    if (warmup_steps <= 0.0) return 1.0;
    return std::min(1.0, static_cast<double>(step + 1) / warmup_steps);
}

CostModel cost_model_for(const ModelConfig& cfg, const GateMode& mode) {
    CostModel cm;
    cm.scale = cfg.scale;
    cm.backbone = cfg.backbone;
    cm.gate_hidden = cfg.gate.hidden;
    cm.include_gate = mode.kind == GateMode::learned;
    return cm;
}

EvalReport evaluate(const Model& model, const Dataset& data, const GateMode& mode,
                    std::size_t batch_size) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    if (batch_size == 0) batch_size = 64;
    const auto& mc = model.config();
    const std::size_t nc = mc.scale.n_coarse();
    const CostModel cm = cost_model_for(mc, mode);

    EvalReport r;
    r.images = data.size();
    r.frequency.assign(nc, 0.0);
    r.has_foreground = true;
    std::size_t correct = 0, fg_n = 0, bg_n = 0;
    double m_sum = 0.0, fg_sum = 0.0, bg_sum = 0.0, tok_sum = 0.0, mac_sum = 0.0;

    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t end = std::min(data.size(), start + batch_size);
        const std::span<const std::size_t> ids(idx.data() + start, end - start);
        const auto images = batch_images(data, ids);
        ForwardOptions fo;
        fo.mode = mode;
        fo.trimming = true;
        const ForwardResult fr = model.forward(images, fo);
        const Tensor& m = fr.soft ? fr.soft->value : fr.decisions;
        for (std::size_t b = 0; b < ids.size(); ++b) {
            const auto& s = data.samples[ids[b]];
            if (static_cast<int>(argmax_row(fr.logits->value, b)) == s.label) ++correct;
            std::vector<double> dec(nc);
            for (std::size_t j = 0; j < nc; ++j) {
                const double mj = m.at(b, j);
                dec[j] = fr.decisions.at(b, j);
                r.frequency[j] += dec[j];
                m_sum += mj;
                if (s.foreground.size() == nc) {
                    if (s.foreground[j] > 0.5) fg_sum += mj, ++fg_n;
                    else bg_sum += mj, ++bg_n;
                }
            }
            if (s.foreground.size() != nc) r.has_foreground = false;
            r.decisions.push_back(std::move(dec));
            r.active_tokens.push_back(fr.active_tokens[b]);
            tok_sum += static_cast<double>(fr.active_tokens[b]);
            mac_sum += cm.mac_count(fr.active_tokens[b]).total();
        }
    }
    const double n = static_cast<double>(data.size());
    r.accuracy = static_cast<double>(correct) / n;
    r.mean_m = m_sum / (n * static_cast<double>(nc));
    r.mean_active_tokens = tok_sum / n;
    r.mean_macs = mac_sum / n;
    for (double& f : r.frequency) f /= n;
    if (r.has_foreground && fg_n > 0 && bg_n > 0) {
        r.foreground_m = fg_sum / static_cast<double>(fg_n);
        r.background_m = bg_sum / static_cast<double>(bg_n);
    } else {
        r.has_foreground = false;
    }
    return r;
}

std::string EvalReport::to_json(std::size_t grid_side) const {
    nlohmann::ordered_json j;
    j["images"] = images;
    j["accuracy"] = accuracy;
    j["mean_m"] = mean_m;
    j["mean_active_tokens"] = mean_active_tokens;
    j["mean_macs"] = mean_macs;
    j["mean_gmacs"] = mean_macs * 1e-9;
    if (has_foreground) {
        j["foreground_m"] = foreground_m;
        j["background_m"] = background_m;
        j["foreground_margin"] = foreground_m - background_m;
    }
    nlohmann::ordered_json grid = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < grid_side; ++r) {
        std::vector<double> row(frequency.begin() + static_cast<std::ptrdiff_t>(r * grid_side),
                                frequency.begin() + static_cast<std::ptrdiff_t>((r + 1) * grid_side));
        grid.push_back(row);
    }
    j["frequency_grid"] = grid;
    return j.dump(2);
}

std::string metrics_csv(const RunConfig& cfg, const std::vector<EpochMetrics>& rows) {
    const auto& l = cfg.model.loss;
    std::ostringstream os;
    os << "# run_name=" << cfg.run_name << '\n'
       << "# loss=" << gate_loss_name(l.kind) << '\n'
       << "# g_star=" << num(l.g_star) << '\n'
       << "# lambda=" << num(l.lambda) << '\n'
       << "# gate_mode=" << cfg.train.gate_mode.str() << '\n'
       << "# seed=" << cfg.train.seed << '\n'
       << "epoch,task_loss,gate_loss,mean_m,mean_active_tokens,mean_macs,accuracy\n";
    for (const auto& r : rows) {
        os << r.epoch << ',' << num(r.task_loss) << ',' << num(r.gate_loss) << ',' << num(r.mean_m)
           << ',' << num(r.mean_active_tokens) << ',' << num(r.mean_macs) << ',' << num(r.accuracy)
           << '\n';
    }
    return os.str();
}

TrainResult train(Model& model, const Dataset& data, const RunConfig& cfg,
                  const TrainOptions& opt) {
    cfg.validate();
    const TrainConfig& tc = cfg.train;
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
    const Dataset& eval_set = opt.eval ? *opt.eval : data;
    if (opt.run_dir) {
        ensure_dir(*opt.run_dir);
        write_text(*opt.run_dir / "config.json", run_config_to_json(cfg) + "\n");
    }

    const std::size_t n = data.size();
    const std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
    const std::size_t total_steps = steps_per_epoch * tc.epochs;
    const double bb_warm = tc.warmup_epochs * static_cast<double>(steps_per_epoch);
    const double gate_warm = tc.gate_warmup_epochs * static_cast<double>(steps_per_epoch);
    const double lambda = model.config().loss.lambda;

    Optimizer optim(tc, model.params());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<int> labels;
    TrainResult result;
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
        Rng shuf(derive_key({tc.seed, 0x73687566ULL, epoch}));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuf.below(i)]);

        double task_sum = 0.0, gate_sum = 0.0;
        for (std::size_t bi = 0; bi < steps_per_epoch; ++bi, ++step) {
            const std::size_t start = bi * tc.batch_size;
            const std::size_t end = std::min(n, start + tc.batch_size);
            const std::span<const std::size_t> ids(order.data() + start, end - start);
            const auto images = batch_images(data, ids);
            labels.clear();
            for (std::size_t i : ids) labels.push_back(data.samples[i].label);

            std::vector<Tensor> grads;
            try {
                ForwardOptions fo;
                fo.mode = tc.gate_mode;
                fo.stochastic = true;
                fo.noise_seed = tc.seed;
                fo.epoch = epoch;
                fo.batch_index = bi;
                fo.trimming = tc.trimming;
                const ForwardResult fr = model.forward(images, fo);
                const ad::Var task = ad::cross_entropy(fr.logits, labels);
                const ad::Var gl = model.gate_loss(fr);
                const ad::Var loss = total_loss(task, gl, lambda);
                if (!std::isfinite(loss->value.item()))
                    throw NumericError("loss is not finite");
                ad::backward(loss);
                grads = fr.binding.gradients();
                task_sum += task->value.item();
                gate_sum += gl->value.item();
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(bi) +
                                   ": " + e.what());
            }
            for (const auto& g : grads)
                if (!g.all_finite())
                    throw NumericError("epoch " + std::to_string(epoch) + " batch " +
                                       std::to_string(bi) + ": non-finite gradient");
            clip_by_group(grads, model.params(), tc.grad_clip);

            const double cos = tc.schedule == ScheduleKind::cosine ? cosine_factor(step, total_steps) : 1.0;
            std::vector<double> lrs;
            lrs.reserve(grads.size());
            const double lr_bb = tc.lr * cos * warmup_factor(step, bb_warm);
            const double lr_gate = tc.lr * cos * warmup_factor(step, gate_warm);
            for (const auto& p : model.params().all())
                lrs.push_back(p.group == ParamGroup::backbone ? lr_bb : lr_gate);
            optim.step(model.params(), grads, lrs);
        }

        const EvalReport er = evaluate(model, eval_set, tc.gate_mode);
        EpochMetrics em;
        em.epoch = epoch;
        em.task_loss = task_sum / static_cast<double>(steps_per_epoch);
        em.gate_loss = gate_sum / static_cast<double>(steps_per_epoch);
        em.mean_m = er.mean_m;
        em.mean_active_tokens = er.mean_active_tokens;
        em.mean_macs = er.mean_macs;
        em.accuracy = er.accuracy;
        result.history.push_back(em);
        result.final_eval = er;

        if (opt.run_dir) {
            write_text(*opt.run_dir / "metrics.csv", metrics_csv(cfg, result.history));
            model.save(*opt.run_dir / "checkpoint.bin", cfg);
        }
        if (opt.log) {
            char line[256];
            std::snprintf(line, sizeof line,
                          "epoch %zu/%zu task %.4f gate %.4f mean_m %.3f tokens %.1f acc %.3f",
                          epoch, tc.epochs, em.task_loss, em.gate_loss, em.mean_m,
                          em.mean_active_tokens, em.accuracy);
            std::string text = line;
            if (er.has_foreground) {
                std::snprintf(line, sizeof line, " fg %.3f bg %.3f", er.foreground_m, er.background_m);
                text += line;
            }
            opt.log(text);
        }
    }
    return result;
}

std::pair<Dataset, Dataset> datasets_from_config(const RunConfig& cfg) {
    const auto& d = cfg.data;
    const auto& sc = cfg.model.scale;
    const std::size_t classes = cfg.model.backbone.num_classes;
    if (d.source == "synthetic") {
        const ClutterOptions opt{d.texture_amplitude, d.texture_noise, d.texture_freq_min, d.texture_freq_max};
        Dataset tr = gen_clutter_dataset(d.seed, d.n_train, classes, sc, opt);
        Dataset ev = gen_clutter_dataset(derive_key({d.seed, 0x6576616cULL}), d.n_eval, classes, sc, opt);
        return {std::move(tr), std::move(ev)};
    }
    auto load = [&](const std::string& p, const char* key) {
        if (!fs::exists(p)) throw ConfigError(std::string("data.") + key + ": path not found: " + p);
        Dataset ds = load_dataset(p);
        if (ds.num_classes != classes)
            throw ConfigError(std::string("data.") + key + ": dataset has " +
                              std::to_string(ds.num_classes) + " classes, backbone.num_classes is " +
                              std::to_string(classes));
        return ds;
    };
    Dataset tr = load(d.train_manifest, "train_manifest");
    Dataset ev = d.eval_manifest.empty() ? Dataset{} : load(d.eval_manifest, "eval_manifest");
    return {std::move(tr), std::move(ev)};
}

std::vector<SweepCell> sweep(const RunConfig& cfg, const fs::path& root,
                             const std::function<void(const std::string&)>& log) {
    cfg.validate();
    ensure_dir(root);
    auto [train_set, eval_set] = datasets_from_config(cfg);
    const Dataset* ev = eval_set.size() ? &eval_set : &train_set;
    std::vector<SweepCell> cells;
    for (double g : cfg.sweep.g_star) {
        for (double l : cfg.sweep.lambda) {
            RunConfig c = cfg;
            c.model.loss.g_star = g;
            c.model.loss.lambda = l;
            char name[96];
            std::snprintf(name, sizeof name, "%s_gstar%g_lambda%g", cfg.run_name.c_str(), g, l);
            c.run_name = name;
            if (log) log(std::string("sweep cell ") + name);
            Model model(c.model, c.train.seed);
            TrainOptions to;
            to.run_dir = root / name;
            to.log = log;
            to.eval = ev;
            TrainResult tr = train(model, train_set, c, to);
            write_text(root / name / "eval.json", tr.final_eval.to_json(c.model.scale.coarse_grid()) + "\n");
            cells.push_back(SweepCell{name, g, l, std::move(tr.final_eval)});
        }
    }
    std::stable_sort(cells.begin(), cells.end(), [](const SweepCell& a, const SweepCell& b) {
        return a.report.mean_macs < b.report.mean_macs;
    });
    std::ostringstream os;
    os << "run,g_star,lambda,accuracy,mean_active_tokens,mean_macs,mean_m\n";
    for (const auto& c : cells) {
        os << c.run_name << ',' << num(c.g_star) << ',' << num(c.lambda) << ','
           << num(c.report.accuracy) << ',' << num(c.report.mean_active_tokens) << ','
           << num(c.report.mean_macs) << ',' << num(c.report.mean_m) << '\n';
    }
    write_text(root / "summary.csv", os.str());
    return cells;
}

CostReport cost_for_source(const ModelConfig& cfg, const std::string& source, const Model* model,
                           const Dataset* data) {
    CostModel cm = cost_model_for(cfg, GateMode{});
    if (source == "plain") {
        cm.include_gate = false;
        const std::size_t n = 1 + cfg.scale.n_fine();
        return cost_report(cm, std::span<const std::size_t>(&n, 1), source);
    }
    const GateMode mode = GateMode::parse(source);
    if (mode.kind == GateMode::none) throw ConfigError("cost: use 'plain' for the single-scale baseline");
    if (mode.kind == GateMode::learned) {
        if (!model || !data) throw std::invalid_argument("cost: learned masks need a model and data");
        const EvalReport r = evaluate(*model, *data, mode);
        return cost_report(cm, r.active_tokens, source);
    }
    cm.include_gate = mode.kind != GateMode::radial;
    const auto sel = fixed_fine_select(mode, cfg.scale);
    const std::size_t n = count_active(expand_mask(sel, cfg.scale));
    return cost_report(cm, std::span<const std::size_t>(&n, 1), source);
}

void write_pgm(const fs::path& path, std::size_t width, std::size_t height,
               const std::vector<unsigned char>& pixels) {
    if (pixels.size() != width * height) throw std::invalid_argument("write_pgm: pixel count mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

EvalReport write_masks(const Model& model, const Dataset& data, const GateMode& mode,
                       const fs::path& out_dir) {
    ensure_dir(out_dir);
    EvalReport r = evaluate(model, data, mode);
    const std::size_t g = model.config().scale.coarse_grid();
    for (std::size_t i = 0; i < r.decisions.size(); ++i) {
        std::vector<unsigned char> px(g * g);
        for (std::size_t j = 0; j < g * g; ++j) px[j] = r.decisions[i][j] > 0.5 ? 255 : 0;
        char name[32];
        std::snprintf(name, sizeof name, "mask_%06zu.pgm", i);
        write_pgm(out_dir / name, g, g, px);
    }
    std::ostringstream os;
    for (std::size_t row = 0; row < g; ++row) {
        for (std::size_t col = 0; col < g; ++col) os << (col ? "," : "") << num(r.frequency[row * g + col]);
        os << '\n';
    }
    write_text(out_dir / "frequency.csv", os.str());
    write_text(out_dir / "report.json", r.to_json(g) + "\n");
    return r;
}

}  // namespace msvit
