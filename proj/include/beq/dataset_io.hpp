#pragma once

// CSV serialization of trial datasets:
//   subject,sequence,period,treatment,time,dose,concentration

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "beq/errors.hpp"
#include "beq/pkmodel.hpp"

namespace beq {

inline constexpr const char* kDatasetHeader = "subject,sequence,period,treatment,time,dose,concentration";

namespace detail {

inline std::string format_real(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.15g", x);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_real(const std::string& s, int line_no, const char* field) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("line " + std::to_string(line_no) + ": invalid " + field + " '" + s + "'");
    }
}

}  // namespace detail

inline void write_dataset_csv(std::ostream& os, const TrialDataset& data) {
    os << kDatasetHeader << '\n';
    for (const Record& r : data.records) {
        os << r.subject << ',' << to_string(r.sequence) << ',' << r.period << ',' << to_string(r.treatment) << ','
           << detail::format_real(r.time) << ',' << detail::format_real(r.dose) << ','
           << detail::format_real(r.concentration) << '\n';
    }
}

inline TrialDataset read_dataset_csv(std::istream& is) {
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) break;
    }
    if (line != kDatasetHeader)
        throw ValidationError("dataset: expected header '" + std::string(kDatasetHeader) + "'");
    TrialDataset data;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != 7) throw ValidationError("line " + std::to_string(line_no) + ": expected 7 fields");
        Record r;
        r.subject = cells[0];
        if (cells[1] == "RT")
            r.sequence = Sequence::RT;
        else if (cells[1] == "TR")
            r.sequence = Sequence::TR;
        else if (cells[1] == "NA")
            r.sequence = Sequence::None;
        else
            throw ValidationError("line " + std::to_string(line_no) + ": sequence must be RT, TR or NA");
        if (cells[2] == "1")
            r.period = 1;
        else if (cells[2] == "2")
            r.period = 2;
        else
            throw ValidationError("line " + std::to_string(line_no) + ": period must be 1 or 2");
        if (cells[3] == "R")
            r.treatment = Treatment::R;
        else if (cells[3] == "T")
            r.treatment = Treatment::T;
        else
            throw ValidationError("line " + std::to_string(line_no) + ": treatment must be R or T");
        r.time = detail::parse_real(cells[4], line_no, "time");
        r.dose = detail::parse_real(cells[5], line_no, "dose");
        r.concentration = detail::parse_real(cells[6], line_no, "concentration");
        if (!(r.time >= 0.0)) throw ValidationError("line " + std::to_string(line_no) + ": time must be >= 0");
        if (!(r.dose > 0.0)) throw ValidationError("line " + std::to_string(line_no) + ": dose must be > 0");
        if (r.sequence != Sequence::None && r.treatment != crossover_treatment(r.sequence, r.period))
            throw ValidationError("line " + std::to_string(line_no) + ": treatment " + to_string(r.treatment) +
                                  " inconsistent with sequence " + to_string(r.sequence) + " in period " +
                                  std::to_string(r.period));
        if (r.sequence == Sequence::None && r.period != 1)
            throw ValidationError("line " + std::to_string(line_no) + ": parallel (NA) records must be period 1");
        data.records.push_back(std::move(r));
    }
    if (data.records.empty()) throw ValidationError("dataset: no records");
    return data;
}

/// Parallel if every record is labelled NA, crossover if every record carries RT/TR.
inline DesignKind infer_design_kind(const TrialDataset& data) {
    bool any_na = false, any_seq = false;
    for (const Record& r : data.records) (r.sequence == Sequence::None ? any_na : any_seq) = true;
    if (any_na && any_seq) throw ValidationError("dataset: mixes parallel (NA) and crossover sequences");
    return any_seq ? DesignKind::Crossover2x2 : DesignKind::Parallel;
}

}  // namespace beq
