#pragma once

// Minimal RFC 4180-style record splitting for the section-tagged evidence
// files. Records are single-line; quoted fields may contain commas and
// doubled quotes.

#include <string>
#include <string_view>
#include <vector>

namespace estnma::csv {

/// Splits one record. Throws std::invalid_argument on an unterminated quote
/// or stray characters after a closing quote.
std::vector<std::string> split_record(std::string_view line);

/// Quotes a field when it contains a delimiter, quote, or edge whitespace.
std::string quote_field(std::string_view field);

std::string trim(std::string_view s);

}  // namespace estnma::csv
