"""Human-machine joint learning for motor-imagery BCIs, with a simulated subject."""

__version__ = "0.1.0"
