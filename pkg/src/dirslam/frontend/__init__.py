"""Sensor side: cameras, noise, normals, TUM I/O, synthetic rendering, association."""
