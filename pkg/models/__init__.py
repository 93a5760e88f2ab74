"""Domain models for the Lindblad Learner."""
