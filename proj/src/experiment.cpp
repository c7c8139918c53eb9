#include "cats/experiment.hpp"

#include <fstream>
#include <sstream>

namespace cats {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: bad boolean '" + v + "' for " + key);
}

class Section {
  public:
    Section(const IniSections& all, const std::string& name) : name_(name) {
        auto it = all.find(name);
        if (it != all.end()) kv_ = &it->second;
    }

    bool present() const { return kv_ != nullptr; }
    bool has(const std::string& key) const { return kv_ && kv_->count(key); }

    std::string str(const std::string& key, const std::string& def = "") const {
        if (!has(key)) return def;
        return kv_->at(key);
    }
    std::string require(const std::string& key) const {
        if (!has(key)) throw ConfigError("config: [" + name_ + "] missing required key '" + key + "'");
        return kv_->at(key);
    }
    std::size_t num(const std::string& key, std::size_t def) const {
        if (!has(key)) return def;
        return parse_num(kv_->at(key), key);
    }
    double real(const std::string& key, double def) const {
        if (!has(key)) return def;
        try {
            return std::stod(kv_->at(key));
        } catch (const std::exception&) {
            throw ConfigError("config: bad number '" + kv_->at(key) + "' for [" + name_ + "] " + key);
        }
    }
    bool flag(const std::string& key, bool def) const {
        if (!has(key)) return def;
        return parse_bool(kv_->at(key), key);
    }

  private:
    std::size_t parse_num(const std::string& v, const std::string& key) const {
        try {
            return std::stoull(v);
        } catch (const std::exception&) {
            throw ConfigError("config: bad integer '" + v + "' for [" + name_ + "] " + key);
        }
    }
    const std::map<std::string, std::string>* kv_ = nullptr;
    std::string name_;
};

}  // namespace

IniSections parse_ini(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    IniSections sections;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string s = trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ConfigError(path + ":" + std::to_string(lineno) + ": unterminated section header");
            section = trim(s.substr(1, s.size() - 2));
            sections[section];
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value, got '" + s +
                              "'");
        if (section.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": key outside any [section]");
        sections[section][trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
    return sections;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    const IniSections ini = parse_ini(path);
    ExperimentConfig cfg;

    Section ds(ini, "dataset");
    if (!ds.present()) throw ConfigError("config: missing [dataset] section in " + path);
    const bool has_csv = ds.has("path");
    const bool has_synth = ds.has("tau") || ds.has("shock_period") || ds.has("length");
    const std::string kind = ds.str("kind", has_csv ? "csv" : "synthetic");
    if (kind == "csv") {
        if (!has_csv) throw ConfigError("config: [dataset] kind=csv requires 'path'");
        if (has_synth)
            throw ConfigError("config: [dataset] must specify exactly one of csv path or synthetic spec");
        cfg.dataset.kind = DatasetBlock::Kind::Csv;
        cfg.dataset.csv_path = ds.require("path");
        cfg.dataset.schema.first_col_timestamp = ds.flag("timestamp_column", true);
        cfg.dataset.schema.frequency = ds.str("frequency");
    } else if (kind == "synthetic") {
        if (has_csv)
            throw ConfigError("config: [dataset] must specify exactly one of csv path or synthetic spec");
        cfg.dataset.kind = DatasetBlock::Kind::Synthetic;
        cfg.dataset.synthetic.tau = ds.num("tau", 24);
        cfg.dataset.synthetic.shock_period = ds.num("shock_period", 8);
        cfg.dataset.synthetic.shock_magnitude = Real(ds.real("shock_magnitude", 5.0));
        cfg.dataset.synthetic.length = ds.num("length", 1920);
        cfg.dataset.synthetic.seed = ds.num("data_seed", 7);
    } else {
        throw ConfigError("config: [dataset] kind must be csv or synthetic, got '" + kind + "'");
    }

    Section sp(ini, "split");
    cfg.split.preset = sp.str("preset");
    if (cfg.split.preset == "etth") {
        cfg.split.spec.train_steps = 12 * 30 * 24;
        cfg.split.spec.val_steps = 4 * 30 * 24;
        cfg.split.spec.test_steps = 4 * 30 * 24;
    } else if (cfg.split.preset == "ettm") {
        cfg.split.spec.train_steps = 12 * 30 * 24 * 4;
        cfg.split.spec.val_steps = 4 * 30 * 24 * 4;
        cfg.split.spec.test_steps = 4 * 30 * 24 * 4;
    } else if (!cfg.split.preset.empty()) {
        throw ConfigError("config: unknown split preset '" + cfg.split.preset + "'");
    }
    if (sp.has("train_steps")) cfg.split.spec.train_steps = sp.num("train_steps", 0);
    if (sp.has("val_steps")) cfg.split.spec.val_steps = sp.num("val_steps", 0);
    if (sp.has("test_steps")) cfg.split.spec.test_steps = sp.num("test_steps", 0);
    cfg.split.spec.train_ratio = sp.real("train_ratio", 0.7);
    cfg.split.spec.val_ratio = sp.real("val_ratio", 0.1);
    cfg.split.spec.test_ratio = sp.real("test_ratio", 0.2);
    cfg.split.context_lookback_set = sp.has("context_lookback");
    // Default: borrow input context across boundaries for real datasets only.
    cfg.split.spec.context_lookback =
        sp.flag("context_lookback", cfg.dataset.kind == DatasetBlock::Kind::Csv);

    Section md(ini, "model");
    cfg.model.input_length = md.num("input_length", 96);
    cfg.model.horizon = md.num("horizon", 96);
    cfg.model.patch_length = md.num("patch_length", 24);
    cfg.model.patch_stride = md.num("patch_stride", 0);
    cfg.model.end_padding = md.flag("end_padding", true);
    cfg.model.embed_dim = md.num("embed_dim", 256);
    cfg.model.heads = md.num("heads", 32);
    cfg.model.layers = md.num("layers", 3);
    cfg.model.ffn_width = md.num("ffn_width", 0);
    cfg.model.mask_p_min = Real(md.real("mask_p_min", 0.1));
    cfg.model.mask_p_max = Real(md.real("mask_p_max", 0.7));
    cfg.model.query_sharing_across_channels = md.flag("query_sharing_across_channels", true);
    cfg.model.dropout_p = Real(md.real("dropout", 0.0));
    cfg.model.attention_kinds.clear();
    if (md.has("attention_kinds")) {
        std::istringstream ks(md.str("attention_kinds"));
        std::string tok;
        while (std::getline(ks, tok, ','))
            if (!trim(tok).empty()) cfg.model.attention_kinds.push_back(attention_kind_from_string(trim(tok)));
    }

    Section tr(ini, "train");
    cfg.train.learning_rate = Real(tr.real("learning_rate", 1e-3));
    cfg.train.batch_size = tr.num("batch_size", 32);
    cfg.train.epochs = tr.num("epochs", 10);
    cfg.train.patience = tr.num("patience", 0);
    cfg.train.seed = tr.num("seed", 2021);
    cfg.train.loss = loss_kind_from_string(tr.str("loss", "mse"));
    cfg.train.clip_norm = Real(tr.real("clip_norm", 0.0));
    cfg.train.shuffle = tr.flag("shuffle", true);

    Section out(ini, "output");
    cfg.output.dir = out.str("dir", "runs");
    cfg.output.name = out.str("name", "run");

    cfg.validate();
    return cfg;
}

void ExperimentConfig::validate() const {
    try {
        if (dataset.kind == DatasetBlock::Kind::Synthetic) dataset.synthetic.validate();
        model.validate();
        train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (output.dir.empty() || output.name.empty())
        throw ConfigError("config: output dir and name must be non-empty");
}

PreparedData prepare_data(ExperimentConfig& cfg) {
    PreparedData d;
    if (cfg.dataset.kind == DatasetBlock::Kind::Csv) {
        try {
            d.raw = load_csv(cfg.dataset.csv_path, cfg.dataset.schema);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    } else {
        d.raw = compose_toy_series(cfg.dataset.synthetic);
    }
    cfg.model.channels = d.raw.channels();
    cfg.model.validate();

    SplitSpec spec = cfg.split.spec;
    spec.lookback = cfg.model.input_length;
    Splits splits = chronological_split(d.raw, spec);
    d.scaler = Scaler::fit(splits.train);
    d.train_scaled = d.scaler.transform(splits.train);
    const SeriesTable val_scaled = d.scaler.transform(splits.val);
    const SeriesTable test_scaled = d.scaler.transform(splits.test);

    const std::size_t L = cfg.model.input_length, T = cfg.model.horizon;
    d.train = WindowDataset::make(d.train_scaled, L, T);
    if (val_scaled.steps() >= L + T) d.val = WindowDataset::make(val_scaled, L, T);
    if (test_scaled.steps() >= L + T) d.test = WindowDataset::make(test_scaled, L, T);
    return d;
}

}  // namespace cats
