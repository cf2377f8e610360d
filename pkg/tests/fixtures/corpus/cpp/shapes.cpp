#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace geo {

class Shape {
public:
    virtual ~Shape() {}
    virtual double area() const = 0;
    double doubled() const { return 2 * area(); }
};

class Circle : public Shape {
public:
    explicit Circle(double r) : r_(r) {}
    double area() const override;
private:
    double r_;
};

double Circle::area() const { return M_PI * r_ * r_; }

struct Rect : Shape {
    double w, h;
    Rect(double w_, double h_) : w(w_), h(h_) {}
    double area() const override
    {
        if (w <= 0 || h <= 0)
            return 0;
        return w * h;
    }
};

template <typename T>
T clamp(T v, T lo, T hi)
{
    return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace geo

int main()
{
    std::vector<std::unique_ptr<geo::Shape>> shapes;
    shapes.emplace_back(new geo::Circle(1.0));
    shapes.emplace_back(new geo::Rect(2, 3));
    double total = 0;
    for (const auto &s : shapes)
        total += s->doubled();
    auto half = [](double x) { return x / 2; };
    std::printf("%.3f %.1f\n", half(total), geo::clamp(7.5, 0.0, 5.0));
    return 0;
}
