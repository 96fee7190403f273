#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <gtest/gtest.h>

#include "duo/error.hpp"

namespace duo::testing {

/// Fresh per-test scratch path under the system temp directory.
inline std::string scratch_path(const std::string& leaf) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const auto dir = std::filesystem::temp_directory_path() / "duo_unit" / info->test_suite_name() / info->name();
  std::filesystem::create_directories(dir);
  return (dir / leaf).string();
}

/// Kind of the duo::Error thrown by f, or nullopt if it returns normally.
template <class F>
std::optional<ErrorKind> kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace duo::testing
