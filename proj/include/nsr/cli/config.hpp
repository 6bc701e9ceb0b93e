#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsr/common.hpp"
#include "nsr/data/synthetic.hpp"
#include "nsr/field/geometric_init.hpp"
#include "nsr/field/params.hpp"
#include "nsr/optim/schedule.hpp"

namespace nsr {

/// Everything a command needs besides paths. Serialized as one JSON tree
/// with a top-level "version"; docs/config.md lists every key.
struct RunConfig {
    static constexpr int kVersion = 1;

    FieldConfig field;
    GeometricInitConfig init;
    TrainConfig train;
    SyntheticConfig data;
    int extract_resolution = 256;
    int render_samples = 0;  // 0: use train.samples_per_ray

    void validate() const {
        field.validate();
        init.validate();
        train.validate();
        data.validate();
        require(extract_resolution >= 8, ErrorCode::config, "extract: resolution must be >= 8");
        require(render_samples == 0 || render_samples >= 2, ErrorCode::config,
                "render: samples must be 0 (use the training value) or >= 2");
    }

    int samples_for_render() const { return render_samples > 0 ? render_samples : train.samples_per_ray; }
};

/// The configuration used for the end-to-end synthetic runs: a hash grid of
/// 8 levels from 16^3 to 128^3 with 2^17 entries per level and 32-wide
/// MLPs, 256 rays x 48 samples per step.
inline RunConfig desk_config() {
    RunConfig c;
    c.field.grid = {8, 16, 128, 2, 17};
    c.field.sdf_hidden = 32;
    c.field.color_hidden = 32;
    c.train.total_steps = 10000;
    c.train.batch_rays = 256;
    c.train.samples_per_ray = 48;
    c.extract_resolution = 128;
    return c;
}

namespace config_detail {

using nlohmann::json;

/// Reads keys of one JSON object, remembering which ones were consumed so
/// that leftovers can be reported as unknown.
class Section {
public:
    Section(const json* node, std::string prefix, std::vector<std::string>& unknown, std::vector<std::string>& bad)
        : node_(node), prefix_(std::move(prefix)), unknown_(&unknown), bad_(&bad) {
        if (node_ && !node_->is_object()) {
            bad_->push_back(name("") + " (expected an object)");
            node_ = nullptr;
        }
    }

    template <typename V> void read(const std::string& key, V& out) {
        used_.insert(key);
        if (!node_ || !node_->contains(key)) return;
        const json& v = node_->at(key);
        try {
            if constexpr (std::is_same_v<V, bool>) {
                if (!v.is_boolean()) throw std::runtime_error("type");
            } else if constexpr (std::is_integral_v<V>) {
                if (!v.is_number_integer()) throw std::runtime_error("type");
            } else if constexpr (std::is_floating_point_v<V>) {
                if (!v.is_number()) throw std::runtime_error("type");
            }
            out = v.get<V>();
        } catch (const std::exception&) {
            bad_->push_back(name(key) + " (wrong type: " + v.dump() + ")");
        }
    }

    Section child(const std::string& key) {
        used_.insert(key);
        const json* c = (node_ && node_->contains(key)) ? &node_->at(key) : nullptr;
        return Section(c, name(key) + ".", *unknown_, *bad_);
    }

    void close() const {
        if (!node_) return;
        for (const auto& [k, v] : node_->items())
            if (!used_.count(k)) unknown_->push_back(name(k));
    }

private:
    std::string name(const std::string& key) const {
        std::string s = prefix_ + key;
        if (!s.empty() && s.back() == '.') s.pop_back();
        return s.empty() ? "<root>" : s;
    }

    const json* node_;
    std::string prefix_;
    std::vector<std::string>* unknown_;
    std::vector<std::string>* bad_;
    std::set<std::string> used_;
};

inline std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
    return out;
}

} // namespace config_detail

/// Applies the keys present in `j` on top of `base`. Unknown keys, wrong
/// types and a missing or unsupported version are config errors that list
/// every offending key.
inline RunConfig parse_config(const nlohmann::json& j, RunConfig base = {}) {
    using config_detail::Section;
    std::vector<std::string> unknown, bad;
    Section root(&j, "", unknown, bad);
    int version = 0;
    root.read("version", version);
    require(j.is_object() && j.contains("version"), ErrorCode::config, "missing \"version\"");
    require(version == RunConfig::kVersion, ErrorCode::config,
            "unsupported version " + j.at("version").dump() + " (expected " +
                std::to_string(RunConfig::kVersion) + ")");
    RunConfig c = base;
    {
        auto f = root.child("field");
        auto g = f.child("grid");
        g.read("num_levels", c.field.grid.num_levels);
        g.read("base_resolution", c.field.grid.base_resolution);
        g.read("max_resolution", c.field.grid.max_resolution);
        g.read("features_per_level", c.field.grid.features_per_level);
        g.read("table_size_log2", c.field.grid.table_size_log2);
        g.close();
        f.read("sdf_hidden", c.field.sdf_hidden);
        f.read("geo_features", c.field.geo_features);
        f.read("color_hidden", c.field.color_hidden);
        f.read("softplus_beta", c.field.softplus_beta);
        f.read("init_radius", c.field.init_radius);
        f.read("init_s", c.field.init_s);
        f.close();
    }
    {
        auto s = root.child("geometric_init");
        s.read("batch", c.init.batch);
        s.read("max_iterations", c.init.max_iterations);
        s.read("check_every", c.init.check_every);
        s.read("lr", c.init.lr);
        s.read("tolerance", c.init.tolerance);
        s.read("check_points", c.init.check_points);
        s.close();
    }
    {
        auto t = root.child("train");
        t.read("total_steps", c.train.total_steps);
        t.read("batch_rays", c.train.batch_rays);
        t.read("samples_per_ray", c.train.samples_per_ray);
        t.read("lr_start", c.train.lr_start);
        t.read("lr_end", c.train.lr_end);
        t.read("mlp_lr_scale", c.train.mlp_lr_scale);
        t.read("initial_levels", c.train.initial_levels);
        t.read("steps_per_level", c.train.steps_per_level);
        t.read("jitter", c.train.jitter);
        t.read("checkpoint_every", c.train.checkpoint_every);
        t.read("validate_every", c.train.validate_every);
        t.read("validation_views", c.train.validation_views);
        t.read("max_abort_fraction", c.train.max_abort_fraction);
        auto a = t.child("adam");
        a.read("beta1", c.train.adam.beta1);
        a.read("beta2", c.train.adam.beta2);
        a.read("epsilon", c.train.adam.epsilon);
        a.close();
        auto ad = t.child("adaptive");
        ad.read("alpha", c.train.adaptive.alpha);
        ad.read("c_min", c.train.adaptive.c_min);
        ad.read("c_max", c.train.adaptive.c_max);
        ad.read("lambda_E", c.train.adaptive.lambda_E);
        ad.read("use_lambda_r", c.train.adaptive.use_lambda_r);
        ad.read("use_lambda_g", c.train.adaptive.use_lambda_g);
        ad.close();
        t.close();
    }
    {
        auto d = root.child("data");
        d.read("views", c.data.views);
        d.read("val_views", c.data.val_views);
        d.read("width", c.data.width);
        d.read("height", c.data.height);
        d.read("distance", c.data.distance);
        d.read("fov_x", c.data.fov_x);
        d.read("gt_resolution", c.data.gt_resolution);
        d.close();
    }
    {
        auto e = root.child("extract");
        e.read("resolution", c.extract_resolution);
        e.close();
        auto r = root.child("render");
        r.read("samples", c.render_samples);
        r.close();
    }
    root.close();
    std::vector<std::string> problems;
    if (!unknown.empty()) problems.push_back("unknown keys: " + config_detail::join(unknown));
    if (!bad.empty()) problems.push_back("invalid values: " + config_detail::join(bad));
    if (!problems.empty()) {
        std::string msg;
        for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
        throw Error(ErrorCode::config, msg);
    }
    c.validate();
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
    std::ifstream in(path);
    require(bool(in), ErrorCode::io, "cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::parse, path.string() + ": " + e.what());
    }
    try {
        return parse_config(j, base);
    } catch (const Error& e) {
        // drop the "<code>: " prefix of the inner message
        const std::string inner = std::string(e.what()).substr(std::string(to_string(e.code())).size() + 2);
        throw Error(e.code(), path.string() + ": " + inner);
    }
}

/// Full snapshot; parse_config(to_json(c)) == c.
inline nlohmann::json to_json(const RunConfig& c) {
    const auto& g = c.field.grid;
    const auto& t = c.train;
    return {
        {"version", RunConfig::kVersion},
        {"field",
         {{"grid",
           {{"num_levels", g.num_levels},
            {"base_resolution", g.base_resolution},
            {"max_resolution", g.max_resolution},
            {"features_per_level", g.features_per_level},
            {"table_size_log2", g.table_size_log2}}},
          {"sdf_hidden", c.field.sdf_hidden},
          {"geo_features", c.field.geo_features},
          {"color_hidden", c.field.color_hidden},
          {"softplus_beta", c.field.softplus_beta},
          {"init_radius", c.field.init_radius},
          {"init_s", c.field.init_s}}},
        {"geometric_init",
         {{"batch", c.init.batch},
          {"max_iterations", c.init.max_iterations},
          {"check_every", c.init.check_every},
          {"lr", c.init.lr},
          {"tolerance", c.init.tolerance},
          {"check_points", c.init.check_points}}},
        {"train",
         {{"total_steps", t.total_steps},
          {"batch_rays", t.batch_rays},
          {"samples_per_ray", t.samples_per_ray},
          {"lr_start", t.lr_start},
          {"lr_end", t.lr_end},
          {"mlp_lr_scale", t.mlp_lr_scale},
          {"initial_levels", t.initial_levels},
          {"steps_per_level", t.steps_per_level},
          {"jitter", t.jitter},
          {"checkpoint_every", t.checkpoint_every},
          {"validate_every", t.validate_every},
          {"validation_views", t.validation_views},
          {"max_abort_fraction", t.max_abort_fraction},
          {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"epsilon", t.adam.epsilon}}},
          {"adaptive",
           {{"alpha", t.adaptive.alpha},
            {"c_min", t.adaptive.c_min},
            {"c_max", t.adaptive.c_max},
            {"lambda_E", t.adaptive.lambda_E},
            {"use_lambda_r", t.adaptive.use_lambda_r},
            {"use_lambda_g", t.adaptive.use_lambda_g}}}}},
        {"data",
         {{"views", c.data.views},
          {"val_views", c.data.val_views},
          {"width", c.data.width},
          {"height", c.data.height},
          {"distance", c.data.distance},
          {"fov_x", c.data.fov_x},
          {"gt_resolution", c.data.gt_resolution}}},
        {"extract", {{"resolution", c.extract_resolution}}},
        {"render", {{"samples", c.render_samples}}},
    };
}

} // namespace nsr
