#include "ctqa/csv.hpp"

#include <cstdio>

#include "ctqa/errors.hpp"

namespace ctqa {

std::string fmt_sig(double v, int digits) {
    if (v == 0.0) v = 0.0; // drop the sign of -0
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
    return buf;
}

std::string fmt_fixed(double v, int decimals) {
    if (v == 0.0) v = 0.0;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double_field(const std::string& field, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(field, &pos);
        if (pos != field.size()) throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        throw data_error(context + ": not a number: '" + field + "'");
    }
}

long long parse_int_field(const std::string& field, const std::string& context) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(field, &pos);
        if (pos != field.size()) throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        throw data_error(context + ": not an integer: '" + field + "'");
    }
}

} // namespace ctqa
