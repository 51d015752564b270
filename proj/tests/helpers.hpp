#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "swingkit/case_model.hpp"
#include "swingkit/errors.hpp"

namespace swingkit::testing {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::config, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline std::string case_path(const std::string& name) {
  return std::string(SWINGKIT_CASES_DIR) + "/" + name;
}

inline CaseDocument load_case(const std::string& name) {
  return parse_case(read_file(case_path(name)));
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  throw std::logic_error("expected a swingkit::Error");
}

}  // namespace swingkit::testing
