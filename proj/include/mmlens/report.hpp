#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mmlens/wilson.hpp"

namespace mmlens {

// One binary judgment, tagged with its report cell.
struct VerdictRecord {
    std::string task_id;
    std::string experiment;
    std::string table;
    std::string row;
    std::string col;
    int pass = 0;
    std::string reason;
    std::string raw;
};

// Append-only JSON-lines verdict log.
void append_verdicts(const std::filesystem::path& path, const std::vector<VerdictRecord>& records);
std::vector<VerdictRecord> load_verdicts(const std::filesystem::path& path);

struct CellCounts {
    std::string table, row, col;
    long successes = 0;
    long n = 0;
};

struct Report {
    std::string text;   // UTF-8 tables, cells rendered p-bar with deltas
    std::string csv;    // table,row,col,successes,n,p_bar,delta_lo,delta_hi,cell
    std::vector<CellCounts> cells;
};

// Pools verdicts into (table, row, col) cells and renders both formats.
// Rendering is a pure function of the pooled counts.
Report pool_and_report(const std::vector<VerdictRecord>& verdicts, double z = 1.96);
Report report_from_counts(const std::vector<CellCounts>& cells, double z = 1.96);

} // namespace mmlens
