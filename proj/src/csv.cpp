#include "csv.hpp"

#include <cctype>
#include <stdexcept>

namespace estnma::csv {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_record(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  std::size_t i = 0;
  const std::size_t n = line.size();
  while (true) {
    // skip leading blanks so that `a, "b"` works
    std::size_t j = i;
    while (j < n && (line[j] == ' ' || line[j] == '\t')) ++j;
    if (j < n && line[j] == '"') {
      i = j + 1;
      bool closed = false;
      while (i < n) {
        if (line[i] == '"') {
          if (i + 1 < n && line[i + 1] == '"') {
            cur.push_back('"');
            i += 2;
            continue;
          }
          closed = true;
          ++i;
          break;
        }
        cur.push_back(line[i++]);
      }
      if (!closed) throw std::invalid_argument("unterminated quoted field");
      while (i < n && (line[i] == ' ' || line[i] == '\t')) ++i;
      if (i < n && line[i] != ',') throw std::invalid_argument("unexpected character after quoted field");
      fields.push_back(std::move(cur));
    } else {
      while (i < n && line[i] != ',') cur.push_back(line[i++]);
      fields.push_back(trim(cur));
    }
    cur.clear();
    if (i >= n) break;
    ++i;  // the comma
  }
  return fields;
}

std::string quote_field(std::string_view field) {
  const bool edge_space =
      !field.empty() && (std::isspace(static_cast<unsigned char>(field.front())) ||
                         std::isspace(static_cast<unsigned char>(field.back())));
  if (!edge_space && field.find_first_of(",\"") == std::string_view::npos) {
    return std::string(field);
  }
  std::string out = "\"";
  for (const char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace estnma::csv
