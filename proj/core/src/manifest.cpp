// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0

#include "rba/manifest.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rba/error.hpp"

namespace rba {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  check(ec == std::errc(), "manifest: cannot format value");
  return std::string(buf, ptr);
}

}  // namespace

Manifest read_manifest_csv(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "manifest: cannot open '", path, "'");
  const auto base = std::filesystem::path(path).parent_path();

  std::string line;
  check(bool(std::getline(in, line)), "manifest: '", path, "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  check(line == "subject_id,path,age_years,sex", "manifest: '", path,
        "': unexpected header '", line,
        "' (expected subject_id,path,age_years,sex)");

  Manifest m;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    check(fields.size() == 4, "manifest: '", path, "' line ", line_no,
          ": expected 4 fields, got ", fields.size());
    Subject s;
    s.id = fields[0];
    auto p = std::filesystem::path(fields[1]);
    s.path = p.is_absolute() ? p.string() : (base / p).string();
    const auto& age = fields[2];
    auto [ptr, ec] = std::from_chars(age.data(), age.data() + age.size(),
                                     s.age_years);
    check(ec == std::errc() && ptr == age.data() + age.size(), "manifest: '",
          path, "' line ", line_no, ": bad age_years '", age, "'");
    s.sex = fields[3];
    m.subjects.push_back(std::move(s));
  }
  return m;
}

void write_manifest_csv(const Manifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  check(out.good(), "manifest: cannot open '", path, "' for writing");
  out << "subject_id,path,age_years,sex\n";
  for (const auto& s : manifest.subjects) {
    check(s.id.find(',') == std::string::npos &&
              s.path.find(',') == std::string::npos &&
              s.sex.find(',') == std::string::npos,
          "manifest: fields must not contain commas (subject '", s.id, "')");
    out << s.id << ',' << s.path << ',' << format_double(s.age_years) << ','
        << s.sex << '\n';
  }
  check(out.good(), "manifest: write to '", path, "' failed");
}

}  // namespace rba
