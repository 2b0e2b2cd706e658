// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace rba {

/// One dataset index row.
struct Subject {
  std::string id;
  std::string path;  // image or tensor file; relative paths are resolved
                     // against the manifest's directory on load
  double age_years = 0;
  std::string sex;   // "F" or "M"
};

struct Manifest {
  std::vector<Subject> subjects;

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(subjects.size());
    for (const auto& s : subjects) out.push_back(s.id);
    return out;
  }
};

/// CSV with header subject_id,path,age_years,sex. Fields must not contain
/// commas; ages are written with shortest round-trip formatting so a
/// write/read cycle is value-exact.
Manifest read_manifest_csv(const std::string& path);
void write_manifest_csv(const Manifest& manifest, const std::string& path);

}  // namespace rba
