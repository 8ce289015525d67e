#include "kdf/eval.hpp"

#include <nlohmann/json.hpp>

#include <sstream>

namespace kdf::eval {

namespace {

using Json = nlohmann::ordered_json;

Json matrix_json(const RecallMatrix& r) {
    Json rows = Json::array();
    for (std::size_t l = 0; l < r.steps(); ++l) {
        Json row = Json::array();
        for (std::size_t t = 0; t < r.tasks(); ++t) {
            row.push_back(r.at(l, t));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

Json forgetting_json(const std::optional<ForgettingReport>& f) {
    if (!f) {
        return nullptr;
    }
    return Json{{"score", f->score}, {"drops", f->drops}};
}

Json evaluation_json(const Evaluation& ev) {
    Json cells = Json::array();
    for (const auto& row : ev.cells) {
        Json r = Json::array();
        for (const auto& c : row) {
            r.push_back({{"evaluated", c.evaluated}, {"excluded", c.excluded}, {"embedding_dim", c.embedding_dim}});
        }
        cells.push_back(std::move(r));
    }
    return {{"fusion", ev.fusion},
            {"recall_matrix", matrix_json(ev.recall)},
            {"mean_recall_at_1", ev.mean_recall_at_1},
            {"forgetting", forgetting_json(ev.forgetting)},
            {"cells", std::move(cells)}};
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json optional_hash(const std::optional<std::uint64_t>& v) { return v ? Json(to_hex(*v)) : Json(nullptr); }

Json epoch_json(const continual::EpochRecord& e) {
    return {{"step", e.step},
            {"epoch", e.epoch},
            {"lr", e.lr},
            {"lambda", optional_number(e.lambda)},
            {"batch_size", e.batch_size},
            {"loss_pr", e.loss_pr},
            {"loss_rkd", e.loss_rkd},
            {"loss_dkd", e.loss_dkd},
            {"active_fraction", e.active_fraction}};
}

} // namespace

std::string results_json(const RunReport& report) {
    const bool fused_headline = report.fusion_headline && report.fused.has_value();
    const Evaluation& head = fused_headline ? *report.fused : report.single;
    Json steps = Json::array();
    for (std::size_t l = 0; l < report.steps.size(); ++l) {
        const auto& s = report.steps[l];
        Json d{{"step", l},
               {"domain", l < report.domains.size() ? Json(report.domains[l]) : Json(nullptr)},
               {"snapshot_hash", to_hex(s.snapshot.hash())},
               {"epochs", s.log.size()},
               {"lambda_queries", s.lambda_queries},
               {"teacher_hash_before", optional_hash(s.teacher_hash_before)},
               {"teacher_hash_after", optional_hash(s.teacher_hash_after)}};
        if (!s.log.empty()) {
            d["final_epoch"] = epoch_json(s.log.back());
        }
        Json recall = Json::array();
        for (std::size_t t = 0; t < head.recall.tasks(); ++t) {
            if (l < head.recall.steps()) {
                recall.push_back(head.recall.at(l, t));
            }
        }
        d["recall_at_1"] = std::move(recall);
        steps.push_back(std::move(d));
    }

    Json by_mode{{"single", evaluation_json(report.single)}};
    if (report.fused) {
        by_mode["fused"] = evaluation_json(*report.fused);
    }
    Json out{{"seed", report.seed},
             {"config_digest", report.config_digest},
             {"domains", report.domains},
             {"mode", fused_headline ? "fused" : "single"},
             {"recall_matrix", matrix_json(head.recall)},
             {"mean_recall_at_1", head.mean_recall_at_1},
             {"forgetting", forgetting_json(head.forgetting)},
             {"per_step_details", std::move(steps)},
             {"by_mode", std::move(by_mode)},
             {"notes", report.notes}};
    return out.dump(2) + "\n";
}

std::string recall_csv(const RecallMatrix& r, std::span<const std::string> names) {
    std::ostringstream os;
    os.precision(17);
    os << "step";
    for (std::size_t t = 0; t < r.tasks(); ++t) {
        os << ',' << (t < names.size() ? names[t] : "task_" + std::to_string(t));
    }
    os << '\n';
    for (std::size_t l = 0; l < r.steps(); ++l) {
        os << l;
        for (std::size_t t = 0; t < r.tasks(); ++t) {
            os << ',' << r.at(l, t);
        }
        os << '\n';
    }
    return os.str();
}

std::string run_log_jsonl(std::span<const continual::StepResult> steps) {
    std::string out;
    for (const auto& s : steps) {
        for (const auto& e : s.log) {
            out += epoch_json(e).dump();
            out += '\n';
        }
    }
    return out;
}

} // namespace kdf::eval
