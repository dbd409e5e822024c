#pragma once

#include <map>
#include <string>
#include <vector>

namespace mkd {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct ParsedLog {
  std::vector<Series> losses;  // sup, st, ss, total
  std::vector<Series> miou;    // one per evaluated branch
  int skipped_lines = 0;
};

/// Reads a JSONL training log. Lines that are not valid step or eval records
/// are skipped and counted.
ParsedLog parse_log(const std::string& path);

/// Two stacked panels: losses vs step, and mIoU vs step when present.
std::string render_svg(const ParsedLog& log);

}  // namespace mkd
