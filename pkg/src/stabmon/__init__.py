"""Continuous indirect measurement of stabilizer operators via monitor qubits."""
