#include "kdf/cli/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace kdf::cli {

namespace {

using Json = nlohmann::ordered_json;

// Reads one JSON object, remembering which keys were used so leftovers can be reported.
class Fields {
public:
    Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ConfigError(where() + " must be an object");
        }
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        used_.insert(key);
        if (!j_.contains(key)) {
            return fallback;
        }
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(field(key) + " has the wrong type");
        }
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const Json& child(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    std::string where() const { return path_.empty() ? "config" : path_; }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!used_.count(key)) {
                throw ConfigError(field(key) + ": unknown field");
            }
        }
    }

private:
    const Json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <typename F>
auto checked(const std::string& field, F&& parse) {
    try {
        return parse();
    } catch (const ConfigError& e) {
        throw ConfigError(field + ": " + e.what());
    }
}

data::PairPolicy parse_policy(const Json& j, const std::string& path) {
    if (j.is_string()) {
        const auto name = j.get<std::string>();
        if (name == "oxford") {
            return data::PairPolicy::oxford();
        }
        if (name == "mulran") {
            return data::PairPolicy::mulran();
        }
        throw ConfigError(path + " must be oxford|mulran or an object");
    }
    Fields f(j, path);
    data::PairPolicy p;
    p.pos_train = f.get("pos_train", p.pos_train);
    p.neg_train = f.get("neg_train", p.neg_train);
    p.pos_test = f.get("pos_test", p.pos_test);
    f.finish();
    checked(path, [&] { p.validate(); return 0; });
    return p;
}

data::DomainStyle parse_style(const Json& j, const std::string& path) {
    Fields f(j, path);
    data::DomainStyle s;
    s.plane_weight = f.get("plane_weight", s.plane_weight);
    s.box_weight = f.get("box_weight", s.box_weight);
    s.clutter_weight = f.get("clutter_weight", s.clutter_weight);
    s.noise_scale = f.get("noise_scale", s.noise_scale);
    s.height_scale = f.get("height_scale", s.height_scale);
    s.landmark_spacing = f.get("landmark_spacing", s.landmark_spacing);
    s.transient_fraction = f.get("transient_fraction", s.transient_fraction);
    s.sensor_tilt = f.get("sensor_tilt", s.sensor_tilt);
    f.finish();
    return s;
}

continual::DomainEntry parse_domain(const Json& j, const std::string& path) {
    Fields f(j, path);
    continual::DomainEntry e;
    e.name = f.get<std::string>("name", "");
    if (e.name.empty()) {
        throw ConfigError(f.field("name") + " is required");
    }
    e.spec.seed = f.get<std::uint64_t>("seed", 0);
    e.spec.n_places = f.get("n_places", e.spec.n_places);
    e.spec.trajectory_length = f.get("trajectory_length", e.spec.trajectory_length);
    e.spec.sessions = f.get("sessions", e.spec.sessions);
    e.spec.visibility_radius = f.get("visibility_radius", e.spec.visibility_radius);
    e.train_fraction = f.get("train_fraction", e.train_fraction);
    e.split_gap = f.get("split_gap", e.split_gap);
    if (f.has("policy")) {
        e.policy = parse_policy(f.child("policy"), f.field("policy"));
    }
    if (f.has("style")) {
        e.spec.style = parse_style(f.child("style"), f.field("style"));
    }
    f.finish();
    checked(path, [&] { e.spec.validate(); return 0; });
    return e;
}

void parse_plan(const Json& j, continual::StepPlan& p) {
    Fields f(j, "plan");
    p.epochs = f.get("epochs", p.epochs);
    p.lr = f.get("lr", p.lr);
    p.lr_decay_epoch = f.get("lr_decay_epoch", p.lr_decay_epoch);
    p.lr_decay = f.get("lr_decay", p.lr_decay);
    p.weight_decay = f.get("weight_decay", p.weight_decay);
    p.batch_start = f.get("batch_start", p.batch_start);
    p.batch_cap = f.get("batch_cap", p.batch_cap);
    p.expansion_rate = f.get("expansion_rate", p.expansion_rate);
    p.expansion_threshold = f.get("expansion_threshold", p.expansion_threshold);
    p.buffer_fraction = f.get("buffer_fraction", p.buffer_fraction);
    p.objective.margin = f.get("margin", p.objective.margin);
    p.objective.tau = f.get("tau", p.objective.tau);
    p.objective.temp = f.get("temp", p.objective.temp);
    p.objective.divergence = checked("plan.divergence", [&] {
        return loss::parse_divergence(f.get<std::string>("divergence", "skl"));
    });
    const auto norm = f.get<std::string>("rkd_norm", "cubic");
    if (norm != "cubic" && norm != "quadratic") {
        throw ConfigError("plan.rkd_norm must be cubic|quadratic");
    }
    p.objective.rkd_norm = norm == "cubic" ? loss::RkdNorm::Cubic : loss::RkdNorm::Quadratic;
    p.lambda_variant = checked("plan.lambda_variant", [&] {
        return loss::parse_lambda_variant(f.get<std::string>("lambda_variant", "literal"));
    });
    f.finish();
}

void set_toggle(ExperimentConfig& c, const std::string& name, bool on, const std::string& field) {
    auto& t = c.protocol.plan.objective.toggles;
    if (name == "pr") {
        t.pr = on;
    } else if (name == "rkd") {
        t.rkd = on;
    } else if (name == "dkd") {
        t.dkd = on;
    } else if (name == "buffer") {
        c.protocol.plan.use_buffer = on;
    } else if (name == "fusion") {
        c.fusion = on;
    } else {
        throw ConfigError(field + ": unknown toggle '" + name + "' (expected pr|rkd|dkd|buffer|fusion)");
    }
}

bool parse_on_off(const std::string& v, const std::string& field) {
    if (v == "on") {
        return true;
    }
    if (v == "off") {
        return false;
    }
    throw ConfigError(field + " must be on|off (got '" + v + "')");
}

Json style_json(const data::DomainStyle& s) {
    return {{"plane_weight", s.plane_weight},         {"box_weight", s.box_weight},
            {"clutter_weight", s.clutter_weight},     {"noise_scale", s.noise_scale},
            {"height_scale", s.height_scale},         {"landmark_spacing", s.landmark_spacing},
            {"transient_fraction", s.transient_fraction}, {"sensor_tilt", s.sensor_tilt}};
}

Json body_json(const ExperimentConfig& c) {
    const auto& p = c.protocol;
    const auto& plan = p.plan;
    Json domains = Json::array();
    for (const auto& d : p.domains) {
        domains.push_back({{"name", d.name},
                           {"seed", d.spec.seed},
                           {"n_places", d.spec.n_places},
                           {"trajectory_length", d.spec.trajectory_length},
                           {"sessions", d.spec.sessions},
                           {"visibility_radius", d.spec.visibility_radius},
                           {"train_fraction", d.train_fraction},
                           {"split_gap", d.split_gap},
                           {"policy",
                            {{"pos_train", d.policy.pos_train},
                             {"neg_train", d.policy.neg_train},
                             {"pos_test", d.policy.pos_test}}},
                           {"style", style_json(d.spec.style)}});
    }
    return {{"schema", kConfigSchema},
            {"points_per_scan", p.points_per_scan},
            {"encoder", {{"hidden", p.encoder.hidden}, {"dim", p.encoder.dim}, {"normalize", p.encoder.normalize}}},
            {"plan",
             {{"epochs", plan.epochs},
              {"lr", plan.lr},
              {"lr_decay_epoch", plan.lr_decay_epoch},
              {"lr_decay", plan.lr_decay},
              {"weight_decay", plan.weight_decay},
              {"batch_start", plan.batch_start},
              {"batch_cap", plan.batch_cap},
              {"expansion_rate", plan.expansion_rate},
              {"expansion_threshold", plan.expansion_threshold},
              {"buffer_fraction", plan.buffer_fraction},
              {"margin", plan.objective.margin},
              {"tau", plan.objective.tau},
              {"temp", plan.objective.temp},
              {"divergence", loss::to_string(plan.objective.divergence)},
              {"rkd_norm", plan.objective.rkd_norm == loss::RkdNorm::Cubic ? "cubic" : "quadratic"},
              {"lambda_variant", loss::to_string(plan.lambda_variant)}}},
            {"toggles",
             {{"pr", plan.objective.toggles.pr},
              {"rkd", plan.objective.toggles.rkd},
              {"dkd", plan.objective.toggles.dkd},
              {"buffer", plan.use_buffer},
              {"fusion", c.fusion}}},
            {"buffer", {{"capacity", p.buffer_capacity}}},
            {"evaluation", {{"forgetting_max", eval::to_string(c.forgetting_max)}}},
            {"domains", std::move(domains)}};
}

} // namespace

std::string ExperimentConfig::digest() const {
    const std::string text = body_json(*this).dump();
    return to_hex(fnv1a64(text.data(), text.size()));
}

std::string ExperimentConfig::to_json() const {
    Json j = body_json(*this);
    j["seeds"] = seeds;
    j["output_dir"] = output_dir.generic_string();
    return j.dump(2) + "\n";
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(source + ": not valid JSON (" + e.what() + ")");
    }
    try {
        Fields f(j, "");
        const auto schema = f.get<std::string>("schema", "");
        if (schema != kConfigSchema) {
            throw ConfigError("schema must be \"" + std::string(kConfigSchema) + "\" (got \"" + schema + "\")");
        }
        ExperimentConfig c;
        auto& p = c.protocol;
        p.points_per_scan = f.get("points_per_scan", p.points_per_scan);
        if (f.has("encoder")) {
            Fields e(f.child("encoder"), "encoder");
            p.encoder.hidden = e.get("hidden", p.encoder.hidden);
            p.encoder.dim = e.get("dim", p.encoder.dim);
            p.encoder.normalize = e.get("normalize", p.encoder.normalize);
            e.finish();
        }
        if (f.has("plan")) {
            parse_plan(f.child("plan"), p.plan);
        }
        if (f.has("toggles")) {
            Fields t(f.child("toggles"), "toggles");
            for (const char* name : {"pr", "rkd", "dkd", "buffer", "fusion"}) {
                if (t.has(name)) {
                    set_toggle(c, name, t.get<bool>(name, true), t.field(name));
                }
            }
            t.finish();
        }
        if (f.has("buffer")) {
            Fields b(f.child("buffer"), "buffer");
            p.buffer_capacity = b.get("capacity", p.buffer_capacity);
            b.finish();
        }
        if (f.has("evaluation")) {
            Fields e(f.child("evaluation"), "evaluation");
            c.forgetting_max = checked("evaluation.forgetting_max", [&] {
                return eval::parse_forgetting_max(e.get<std::string>("forgetting_max", "printed"));
            });
            e.finish();
        }
        if (!f.has("domains") || !f.child("domains").is_array() || f.child("domains").empty()) {
            throw ConfigError("domains must be a non-empty array");
        }
        const Json& domains = f.child("domains");
        for (std::size_t i = 0; i < domains.size(); ++i) {
            p.domains.push_back(parse_domain(domains[i], "domains[" + std::to_string(i) + "]"));
        }
        c.seeds = f.get<std::vector<std::uint64_t>>("seeds", c.seeds);
        if (c.seeds.empty()) {
            throw ConfigError("seeds must list at least one seed");
        }
        c.output_dir = f.get<std::string>("output_dir", c.output_dir.string());
        f.finish();
        p.validate();
        p.digest = c.digest();
        return c;
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw ConfigError(file.string() + ": cannot open config");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), file.string());
}

void apply_overrides(ExperimentConfig& c, const Overrides& o) {
    for (const auto& t : o.toggles) {
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--toggle expects name=on|off (got '" + t + "')");
        }
        const std::string name = t.substr(0, eq);
        set_toggle(c, name, parse_on_off(t.substr(eq + 1), "--toggle " + name), "--toggle");
    }
    if (o.lambda_variant) {
        c.protocol.plan.lambda_variant = checked("--lambda-variant", [&] { return loss::parse_lambda_variant(*o.lambda_variant); });
    }
    if (o.divergence) {
        c.protocol.plan.objective.divergence = checked("--divergence", [&] { return loss::parse_divergence(*o.divergence); });
    }
    if (o.fusion) {
        c.fusion = parse_on_off(*o.fusion, "--fusion");
    }
    if (!o.seeds.empty()) {
        c.seeds = o.seeds;
    }
    if (o.output_dir) {
        c.output_dir = *o.output_dir;
    }
    checked("overrides", [&] { c.protocol.validate(); return 0; });
    c.protocol.digest = c.digest();
}

} // namespace kdf::cli
