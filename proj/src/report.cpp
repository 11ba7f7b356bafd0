#include "mmlens/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "mmlens/errors.hpp"

namespace mmlens {

using json = nlohmann::json;

void append_verdicts(const std::filesystem::path& path, const std::vector<VerdictRecord>& records) {
    std::ofstream f(path, std::ios::app);
    if (!f) throw IoError("cannot open verdict log: " + path.string());
    for (const auto& r : records) {
        json line = {{"task_id", r.task_id}, {"experiment", r.experiment}, {"table", r.table},
                     {"row", r.row},         {"col", r.col},               {"pass", r.pass},
                     {"reason", r.reason},   {"raw", r.raw}};
        f << line.dump() << "\n";
    }
}

std::vector<VerdictRecord> load_verdicts(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read verdict log: " + path.string());
    std::vector<VerdictRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object())
            throw IoError("malformed verdict log line: " + line);
        VerdictRecord r;
        r.task_id = doc.value("task_id", "");
        r.experiment = doc.value("experiment", "");
        r.table = doc.value("table", "");
        r.row = doc.value("row", "");
        r.col = doc.value("col", "");
        r.pass = doc.value("pass", 0);
        r.reason = doc.value("reason", "");
        r.raw = doc.value("raw", "");
        out.push_back(std::move(r));
    }
    return out;
}

namespace {

// canonical orderings used by the result tables; unknown labels follow
// alphabetically after the known ones
int row_priority(const std::string& row) {
    static const std::vector<std::string> known = {
        "all_text",
        "padding_only",
        "content_only",
        "ko_ref_to_text",
        "ko_ref_to_text_padding",
        "ko_ref_to_text_content",
        "ko_ref_to_image",
        "observation_rate",
    };
    for (size_t i = 0; i < known.size(); ++i)
        if (known[i] == row) return static_cast<int>(i);
    return static_cast<int>(known.size());
}

int col_priority(const std::string& col) {
    static const std::vector<std::string> known = {
        "color_transfer", "style_transfer", "object_addition", "object_removal",
        "human_customization",
    };
    for (size_t i = 0; i < known.size(); ++i)
        if (known[i] == col) return static_cast<int>(i);
    return static_cast<int>(known.size());
}

std::string pad_to(const std::string& s, size_t width) {
    std::string out = s;
    while (out.size() < width) out.push_back(' ');
    return out;
}

} // namespace

Report report_from_counts(const std::vector<CellCounts>& cells, double z) {
    // group per table, keep deterministic row/column orders
    std::map<std::string, std::vector<const CellCounts*>> tables;
    for (const auto& c : cells) tables[c.table].push_back(&c);

    std::ostringstream text;
    std::ostringstream csv;
    csv << "table,row,col,successes,n,p_bar,delta_lo,delta_hi,cell\n";

    for (auto& [table, entries] : tables) {
        auto label_less = [](auto priority) {
            return [priority](const std::string& a, const std::string& b) {
                int pa = priority(a), pb = priority(b);
                return pa != pb ? pa < pb : a < b;
            };
        };
        std::vector<std::string> rows, cols;
        for (const auto* c : entries) {
            if (std::find(rows.begin(), rows.end(), c->row) == rows.end()) rows.push_back(c->row);
            if (std::find(cols.begin(), cols.end(), c->col) == cols.end()) cols.push_back(c->col);
        }
        std::sort(rows.begin(), rows.end(), label_less(row_priority));
        std::sort(cols.begin(), cols.end(), label_less(col_priority));

        std::map<std::pair<std::string, std::string>, const CellCounts*> grid;
        for (const auto* c : entries) grid[{c->row, c->col}] = c;

        std::vector<std::vector<std::string>> rendered;
        rendered.push_back({table});
        for (const auto& col : cols) rendered.back().push_back(col);
        for (const auto& row : rows) {
            rendered.push_back({row});
            for (const auto& col : cols) {
                auto it = grid.find({row, col});
                if (it == grid.end()) {
                    rendered.back().push_back("-");
                    continue;
                }
                const CellCounts& c = *it->second;
                WilsonInterval w = wilson(c.successes, c.n, z);
                std::string cell = render_cell(w) + " (" + std::to_string(c.successes) + "/" +
                                   std::to_string(c.n) + ")";
                rendered.back().push_back(cell);
                char p_buf[64], lo_buf[64], hi_buf[64];
                std::snprintf(p_buf, sizeof(p_buf), "%.6f", w.p_bar);
                std::snprintf(lo_buf, sizeof(lo_buf), "%.6f", w.delta_lo);
                std::snprintf(hi_buf, sizeof(hi_buf), "%.6f", w.delta_hi);
                csv << table << ',' << row << ',' << col << ',' << c.successes << ',' << c.n
                    << ',' << p_buf << ',' << lo_buf << ',' << hi_buf << ',' << render_cell(w)
                    << "\n";
            }
        }

        std::vector<size_t> widths(cols.size() + 1, 0);
        for (const auto& line : rendered)
            for (size_t i = 0; i < line.size(); ++i)
                widths[i] = std::max(widths[i], line[i].size());
        for (const auto& line : rendered) {
            for (size_t i = 0; i < line.size(); ++i) {
                if (i) text << "  ";
                text << pad_to(line[i], widths[i]);
            }
            text << "\n";
        }
        text << "\n";
    }

    Report report;
    report.text = text.str();
    report.csv = csv.str();
    report.cells = cells;
    return report;
}

Report pool_and_report(const std::vector<VerdictRecord>& verdicts, double z) {
    std::map<std::tuple<std::string, std::string, std::string>, CellCounts> pooled;
    for (const auto& v : verdicts) {
        auto& cell = pooled[{v.table, v.row, v.col}];
        cell.table = v.table;
        cell.row = v.row;
        cell.col = v.col;
        cell.n += 1;
        cell.successes += v.pass ? 1 : 0;
    }
    std::vector<CellCounts> cells;
    cells.reserve(pooled.size());
    for (auto& [key, cell] : pooled) cells.push_back(cell);
    return report_from_counts(cells, z);
}

} // namespace mmlens
