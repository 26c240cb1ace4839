"""Two-stage design for RIS-assisted cell-free MIMO downlinks.

Stage one associates RISs with UEs (many-to-many matching on MM-optimized
per-pair utilities); stage two sets RIS phases for the associated UEs and
designs AP precoders by joint block diagonalization under per-AP power limits.
"""

__version__ = "0.1.0"
