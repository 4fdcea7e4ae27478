#pragma once

#include <stdexcept>
#include <string>

namespace ctqa {

// Error taxonomy maps onto process exit codes: usage/config -> 1,
// data -> 2, external model -> 3.
class usage_error : public std::runtime_error {
public:
    explicit usage_error(const std::string& msg) : std::runtime_error(msg) {}
};

class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

class model_error : public std::runtime_error {
public:
    explicit model_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace ctqa
