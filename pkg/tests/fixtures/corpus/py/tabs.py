# -*- coding: utf-8 -*-
"""Tab-indented module with loops and early exits."""
from __future__ import annotations


def first_even(xs):
	for x in xs:
		if x % 2 == 0:
			return x
	else:
		return None


def countdown(n):
	steps = 0
	while n > 0:
		n -= 1
		steps += 1
		if steps > 1000:
			break
	return steps


def safe_div(a, b):
	try:
		return a / b
	except ZeroDivisionError:
		return float("inf")
	finally:
		pass


def fail():
	raise ValueError("boom")


def main():
	out = [first_even([1, 3, 4]), first_even([1, 3]), countdown(5)]
	out += [safe_div(1, 2), safe_div(1, 0)]
	try:
		fail()
	except ValueError:
		out.append("caught")
	print(out)


if __name__ == "__main__":
	main()
