#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "seedstab/experiment.hpp"
#include "seedstab/svg.hpp"

namespace fs = std::filesystem;

namespace seedstab {

namespace {

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return nlohmann::json::parse(in);
}

struct PanelStatus {
    std::string name;
    bool present = false;
    std::vector<std::string> files;
    std::string missing_reason;
};

struct GroupArtifacts {
    const ArchGroup* group = nullptr;
    std::string dir;
    bool has(const std::string& file) const { return fs::exists(dir + "/" + file); }
};

// Family key: architecture without the optimizer (for Adam/AdamW joins).
std::string family_of(const ArchGroup& g) {
    return "L" + std::to_string(g.base_cfg.n_layers) + "H" +
           std::to_string(g.base_cfg.n_heads) +
           (g.base_cfg.attn_only ? "-attn-" : "-mlp-") + hex64(g.arch_id).substr(8);
}

}  // namespace

int cmd_report(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<ArchGroup> groups = enumerate_groups(cfg);
    const std::string report_dir = cfg.out_root + "/report";
    fs::create_directories(report_dir);

    std::vector<GroupArtifacts> arts;
    for (const ArchGroup& g : groups)
        arts.push_back({&g, cfg.out_root + "/analysis/" + g.tag});

    // Gather input digests for the idempotency manifest.
    std::vector<std::string> input_rel;
    auto note_input = [&](const std::string& rel) {
        if (fs::exists(cfg.out_root + "/" + rel)) input_rel.push_back(rel);
    };
    for (const GroupArtifacts& a : arts) {
        const std::string base = "analysis/" + a.group->tag + "/";
        for (const char* f :
             {"profile.json", "stability.csv", "cka_overlay.csv", "alignment.json",
              "parity.csv", "sweep.csv", "uniqueness_layers.csv"})
            note_input(base + f);
    }
    note_input("analysis/metasne/points.csv");
    std::sort(input_rel.begin(), input_rel.end());
    const nlohmann::json inputs = manifest_inputs(input_rel, cfg.out_root);
    const std::string manifest_path = report_dir + "/report.manifest.json";
    if (manifest_up_to_date(manifest_path, inputs, {report_dir + "/panels.json"}, ""))
        return 0;

    std::vector<PanelStatus> panels;

    // --- layer stability curves --------------------------------------------
    {
        PanelStatus panel{"layer_stability", false, {}, ""};
        std::vector<svg::Series> series;
        CsvWriter csv({"group", "optimizer", "layer", "S_l"});
        for (const GroupArtifacts& a : arts) {
            if (!a.has("profile.json")) continue;
            const auto prof = read_json(a.dir + "/profile.json");
            svg::Series s;
            s.label = a.group->tag;
            int layer = 1;
            for (const auto& v : prof.at("layer_stability")) {
                s.xs.push_back(layer);
                s.ys.push_back(v.get<double>());
                csv.add_row({a.group->tag, optimizer_name(a.group->train_cfg.optimizer),
                             std::to_string(layer), CsvWriter::num(v.get<double>())});
                ++layer;
            }
            series.push_back(std::move(s));
        }
        if (!series.empty()) {
            csv.write(report_dir + "/layer_stability.csv");
            svg::write_file(report_dir + "/layer_stability.svg",
                            svg::line_chart("Layer stability by depth", "layer",
                                            "S_l", series));
            panel.present = true;
            panel.files = {"layer_stability.csv", "layer_stability.svg"};
        } else {
            panel.missing_reason = "no profile.json outputs; run analyze --which stability";
        }
        panels.push_back(std::move(panel));
    }

    // --- Adam vs AdamW overlay ----------------------------------------------
    {
        PanelStatus panel{"adam_vs_adamw", false, {}, ""};
        std::map<std::string, std::vector<const GroupArtifacts*>> families;
        for (const GroupArtifacts& a : arts)
            families[family_of(*a.group)].push_back(&a);

        std::vector<svg::Series> series;
        CsvWriter csv({"family", "optimizer", "layer", "S_l"});
        CsvWriter parity({"family", "optimizer", "mean_val_ppl", "mean_S",
                          "mean_head_output_norm"});
        for (const auto& [family, members] : families) {
            if (members.size() < 2) continue;
            bool all_have = true;
            for (const auto* m : members)
                if (!m->has("profile.json") || !m->has("parity.csv") ||
                    !m->has("stability.csv"))
                    all_have = false;
            if (!all_have) continue;
            for (const auto* m : members) {
                const auto prof = read_json(m->dir + "/profile.json");
                svg::Series s;
                const std::string opt = optimizer_name(m->group->train_cfg.optimizer);
                s.label = family + " " + opt;
                s.color = opt == "adam" ? "#1f77b4" : "#d62728";
                int layer = 1;
                for (const auto& v : prof.at("layer_stability")) {
                    s.xs.push_back(layer);
                    s.ys.push_back(v.get<double>());
                    csv.add_row({family, opt, std::to_string(layer),
                                 CsvWriter::num(v.get<double>())});
                    ++layer;
                }
                series.push_back(std::move(s));

                const auto parity_rows = read_csv(m->dir + "/parity.csv");
                double ppl_acc = 0.0, norm_acc = 0.0;
                int count = 0;
                for (size_t r = 1; r < parity_rows.size(); ++r) {
                    ppl_acc += std::stod(parity_rows[r][3]);
                    norm_acc += std::stod(parity_rows[r][5]);
                    ++count;
                }
                const auto stab_rows = read_csv(m->dir + "/stability.csv");
                double s_acc = 0.0;
                int s_count = 0;
                for (size_t r = 1; r < stab_rows.size(); ++r) {
                    s_acc += std::stod(stab_rows[r][4]);
                    ++s_count;
                }
                parity.add_row({family, opt, CsvWriter::num(ppl_acc / count),
                                CsvWriter::num(s_acc / s_count),
                                CsvWriter::num(norm_acc / count)});
            }
        }
        if (!series.empty()) {
            csv.write(report_dir + "/adam_vs_adamw.csv");
            parity.write(report_dir + "/adam_vs_adamw_parity.csv");
            svg::write_file(report_dir + "/adam_vs_adamw.svg",
                            svg::line_chart("Adam vs AdamW layer stability", "layer",
                                            "S_l", series));
            panel.present = true;
            panel.files = {"adam_vs_adamw.csv", "adam_vs_adamw_parity.csv",
                           "adam_vs_adamw.svg"};
        } else {
            panel.missing_reason =
                "needs stability+norms analyses for both optimizer variants";
        }
        panels.push_back(std::move(panel));
    }

    // --- stability gap and relative depth vs depth ---------------------------
    {
        PanelStatus panel{"stability_gap", false, {}, ""};
        CsvWriter csv({"group", "n_layers", "S_lmax", "S_lmin", "delta_s", "r_lmax",
                       "r_lmin"});
        std::vector<svg::ScatterPoint> gap_points;
        std::vector<svg::ScatterPoint> depth_points;
        for (const GroupArtifacts& a : arts) {
            if (!a.has("profile.json")) continue;
            const auto prof = read_json(a.dir + "/profile.json");
            const auto s_l = prof.at("layer_stability").get<std::vector<double>>();
            const int l_max = prof.at("l_max").get<int>();
            const int l_min = prof.at("l_min").get<int>();
            const double delta = prof.at("delta_s").get<double>();
            const double depth = static_cast<double>(a.group->base_cfg.n_layers);
            csv.add_row({a.group->tag, std::to_string(a.group->base_cfg.n_layers),
                         CsvWriter::num(s_l[static_cast<size_t>(l_max - 1)]),
                         CsvWriter::num(s_l[static_cast<size_t>(l_min - 1)]),
                         CsvWriter::num(delta),
                         CsvWriter::num(prof.at("r_lmax").get<double>()),
                         CsvWriter::num(prof.at("r_lmin").get<double>())});
            gap_points.push_back({depth, delta, "#1f77b4"});
            depth_points.push_back({depth, prof.at("r_lmax").get<double>(), "#1f77b4"});
            depth_points.push_back({depth, prof.at("r_lmin").get<double>(), "#d62728"});
        }
        if (!gap_points.empty()) {
            csv.write(report_dir + "/stability_gap.csv");
            svg::write_file(report_dir + "/stability_gap.svg",
                            svg::scatter_chart("Stability gap vs depth", "layers",
                                               "delta S", gap_points));
            svg::write_file(
                report_dir + "/relative_depth.svg",
                svg::scatter_chart("Most/least stable relative depth", "layers",
                                   "r_l", depth_points,
                                   {{"r_lmax", "#1f77b4"}, {"r_lmin", "#d62728"}}));
            panel.present = true;
            panel.files = {"stability_gap.csv", "stability_gap.svg",
                           "relative_depth.svg"};
        } else {
            panel.missing_reason = "no profile.json outputs; run analyze --which stability";
        }
        panels.push_back(std::move(panel));
    }

    // --- CKA vs head stability ----------------------------------------------
    {
        PanelStatus panel{"cka_overlay", false, {}, ""};
        CsvWriter csv({"group", "layer", "cka", "head_stability"});
        std::vector<svg::Series> series;
        for (const GroupArtifacts& a : arts) {
            if (!a.has("cka_overlay.csv")) continue;
            const auto rows = read_csv(a.dir + "/cka_overlay.csv");
            svg::Series cka_s, stab_s;
            cka_s.label = a.group->tag + " cka";
            stab_s.label = a.group->tag + " S_l";
            for (size_t r = 1; r < rows.size(); ++r) {
                const double layer = std::stod(rows[r][2]);
                const double cka_v = std::stod(rows[r][3]);
                const double s_v = std::stod(rows[r][4]);
                cka_s.xs.push_back(layer);
                cka_s.ys.push_back(cka_v);
                stab_s.xs.push_back(layer);
                stab_s.ys.push_back(s_v);
                csv.add_row({a.group->tag, rows[r][2], rows[r][3], rows[r][4]});
            }
            series.push_back(std::move(cka_s));
            series.push_back(std::move(stab_s));
        }
        if (!series.empty()) {
            csv.write(report_dir + "/cka_overlay.csv");
            svg::write_file(report_dir + "/cka_overlay.svg",
                            svg::line_chart("Residual CKA vs head stability", "layer",
                                            "similarity", series));
            panel.present = true;
            panel.files = {"cka_overlay.csv", "cka_overlay.svg"};
        } else {
            panel.missing_reason = "no cka_overlay.csv outputs; run analyze --which cka";
        }
        panels.push_back(std::move(panel));
    }

    // --- alignment heatmaps ---------------------------------------------------
    {
        PanelStatus panel{"alignment", false, {}, ""};
        for (const GroupArtifacts& a : arts) {
            if (!a.has("alignment.json")) continue;
            const auto j = read_json(a.dir + "/alignment.json");
            const int n = j.at("n_layers").get<int>();
            std::vector<double> values;
            for (const auto& row : j.at("rows"))
                for (const auto& v : row) values.push_back(v.get<double>());
            const std::string file = "alignment_" + a.group->tag + ".svg";
            svg::write_file(report_dir + "/" + file,
                            svg::heatmap("Best-match alignment " + a.group->tag,
                                         values, n, n, "match layer",
                                         "anchor layer"));
            panel.files.push_back(file);
        }
        panel.present = !panel.files.empty();
        if (!panel.present)
            panel.missing_reason =
                "no alignment.json outputs; run analyze --which cross_layer";
        panels.push_back(std::move(panel));
    }

    // --- meta-SNE -------------------------------------------------------------
    {
        PanelStatus panel{"metasne", false, {}, ""};
        const std::string points_path = cfg.out_root + "/analysis/metasne/points.csv";
        if (fs::exists(points_path)) {
            const auto rows = read_csv(points_path);
            std::vector<svg::ScatterPoint> points;
            CsvWriter csv({"arch_id", "optimizer", "seed", "layer", "head", "r_l",
                           "x", "y"});
            for (size_t r = 1; r < rows.size(); ++r) {
                const double r_l = std::stod(rows[r][5]);
                points.push_back({std::stod(rows[r][6]), std::stod(rows[r][7]),
                                  svg::ramp_color(r_l)});
                csv.add_row({rows[r][0], rows[r][1], rows[r][2], rows[r][3],
                             rows[r][4], rows[r][5], rows[r][6], rows[r][7]});
            }
            csv.write(report_dir + "/metasne.csv");
            svg::write_file(report_dir + "/metasne.svg",
                            svg::scatter_chart(
                                "meta-SNE of attention heads (color = relative depth)",
                                "x", "y", points,
                                {{"shallow", svg::ramp_color(0.0)},
                                 {"mid", svg::ramp_color(0.5)},
                                 {"deep", svg::ramp_color(1.0)}}));
            panel.present = true;
            panel.files = {"metasne.csv", "metasne.svg"};
        } else {
            panel.missing_reason = "no metasne points; run analyze --which metasne";
        }
        panels.push_back(std::move(panel));
    }

    // --- prompt-length sweep ----------------------------------------------------
    {
        PanelStatus panel{"prompt_length", false, {}, ""};
        CsvWriter csv({"group", "length", "layer", "S_l"});
        std::vector<svg::Series> series;
        for (const GroupArtifacts& a : arts) {
            if (!a.has("sweep.csv")) continue;
            const auto rows = read_csv(a.dir + "/sweep.csv");
            std::map<int, std::pair<double, int>> mean_by_len;
            for (size_t r = 1; r < rows.size(); ++r) {
                const int len = std::stoi(rows[r][2]);
                mean_by_len[len].first += std::stod(rows[r][4]);
                mean_by_len[len].second += 1;
                csv.add_row({a.group->tag, rows[r][2], rows[r][3], rows[r][4]});
            }
            svg::Series s;
            s.label = a.group->tag;
            for (const auto& [len, acc] : mean_by_len) {
                s.xs.push_back(len);
                s.ys.push_back(acc.first / acc.second);
            }
            series.push_back(std::move(s));
        }
        if (!series.empty()) {
            csv.write(report_dir + "/prompt_length.csv");
            svg::write_file(report_dir + "/prompt_length.svg",
                            svg::line_chart("Mean stability vs prompt length",
                                            "prompt length (whitespace tokens)",
                                            "mean S_l", series));
            panel.present = true;
            panel.files = {"prompt_length.csv", "prompt_length.svg"};
        } else {
            panel.missing_reason = "no sweep.csv outputs; run analyze --which sweep";
        }
        panels.push_back(std::move(panel));
    }

    // --- panel index ------------------------------------------------------------
    nlohmann::json panel_json = nlohmann::json::array();
    for (const PanelStatus& p : panels) {
        nlohmann::json entry{{"name", p.name},
                             {"status", p.present ? "present" : "missing"},
                             {"files", p.files}};
        if (!p.present) entry["reason"] = p.missing_reason;
        panel_json.push_back(entry);
    }
    svg::write_file(report_dir + "/panels.json",
                    nlohmann::json{{"panels", panel_json}}.dump(2) + "\n");
    write_manifest(manifest_path, "report", inputs, {"panels.json"},
                   nlohmann::json::object());
    return 1;
}

}  // namespace seedstab
