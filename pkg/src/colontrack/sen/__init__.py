"""Shape estimation network (conv -> LSTM -> dense) implemented with numpy."""
